//! HTTP surfaces for the log and the notifier, plus matching clients.
//!
//! Log endpoints:
//!
//! * `GET  /ct/sth` — latest head with its journal position
//! * `GET  /ct/sth/{index}` — head at a position
//! * `GET  /ct/entries?start=N&end=M` — entry slice `[N, M)`
//! * `GET  /ct/proof/consistency?first=N&second=M` — main-tree proof
//! * `POST /ct/submit` — submit a certificate
//!
//! Notifier endpoints:
//!
//! * `POST   /lwm/subscribe` — register a query (optional push callback)
//! * `GET    /lwm/new?id=X&since=N` — notifications since position N
//! * `GET    /lwm/notification?id=X&sth_index=N` — one notification
//! * `DELETE /lwm/subscribe/{id}` — drop a subscription
//!
//! Everything is JSON with base64 binary fields; see [`crate::api`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use crate::api::{
    ApiError, ConsistencyResponse, EntriesResponse, EntryJson, LogReader, NotificationJson,
    NotificationSource, SthJson, SthResponse, SubmitRequest, SubmitResponse, SubscribeRequest,
    SubscriptionInfo,
};
use crate::hashcore::Digest;
use crate::logsim::{LogEntry, LogState, SignedTreeHead};
use crate::notifier::{Notification, Notifier, NotifierError, PushTarget};
use crate::omega::WildcardQuery;
use crate::wtree::wire::{b64_decode, b64_encode};

/// Wall-clock milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A running HTTP service; dropping it (or calling [`Self::shutdown`])
/// stops the worker threads.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<std::thread::JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn spawn_service<F>(addr: &str, workers: usize, handler: F) -> std::io::Result<HttpServer>
where
    F: Fn(&Method, &str, &[u8]) -> (u16, String) + Send + Sync + 'static,
{
    let server = Server::http(addr)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(a) => a,
        #[allow(unreachable_patterns)]
        _ => unreachable!("http listener"),
    };
    let server = Arc::new(server);
    let handler = Arc::new(handler);
    let stop = Arc::new(AtomicBool::new(false));
    let mut handles = Vec::new();
    for _ in 0..workers {
        let server = server.clone();
        let handler = handler.clone();
        let stop = stop.clone();
        handles.push(std::thread::spawn(move || loop {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match server.recv_timeout(Duration::from_millis(50)) {
                Ok(Some(mut request)) => {
                    let mut body = Vec::new();
                    let _ = std::io::Read::read_to_end(request.as_reader(), &mut body);
                    let url = request.url().to_string();
                    let (status, payload) = handler(request.method(), &url, &body);
                    let header =
                        Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                            .expect("static header");
                    let response = Response::from_string(payload)
                        .with_status_code(status)
                        .with_header(header);
                    let _ = request.respond(response);
                }
                Ok(None) => {}
                Err(_) => break,
            }
        }));
    }
    Ok(HttpServer {
        addr,
        stop,
        workers: handles,
    })
}

fn split_query(url: &str) -> (&str, HashMap<String, String>) {
    match url.split_once('?') {
        None => (url, HashMap::new()),
        Some((path, qs)) => {
            let params = qs
                .split('&')
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            (path, params)
        }
    }
}

fn json_error(status: u16, message: &str) -> (u16, String) {
    (
        status,
        serde_json::json!({ "error": message }).to_string(),
    )
}

fn ok_json<T: serde::Serialize>(value: &T) -> (u16, String) {
    (200, serde_json::to_string(value).expect("serializable"))
}

fn parse_u64(params: &HashMap<String, String>, key: &str) -> Result<u64, String> {
    params
        .get(key)
        .ok_or_else(|| format!("missing parameter {key}"))?
        .parse::<u64>()
        .map_err(|_| format!("parameter {key} is not an integer"))
}

/// Serve a log over HTTP. Returns once the listener is bound.
pub fn serve_log(log: Arc<RwLock<LogState>>, addr: &str) -> std::io::Result<HttpServer> {
    spawn_service(addr, 4, move |method, url, body| {
        let (path, params) = split_query(url);
        match (method, path) {
            (Method::Get, "/ct/sth") => {
                let state = log.read().unwrap();
                match state.latest_sth() {
                    Some(sth) => ok_json(&SthResponse {
                        position: state.sth_count() - 1,
                        sth: SthJson::from(sth),
                    }),
                    None => json_error(404, "no sth issued yet"),
                }
            }
            (Method::Get, _) if path.starts_with("/ct/sth/") => {
                let idx = match path["/ct/sth/".len()..].parse::<u64>() {
                    Ok(i) => i,
                    Err(_) => return json_error(400, "bad sth index"),
                };
                let state = log.read().unwrap();
                match state.sth_at(idx) {
                    Ok(sth) => ok_json(&SthResponse {
                        position: idx,
                        sth: SthJson::from(sth),
                    }),
                    Err(e) => json_error(404, &e.to_string()),
                }
            }
            (Method::Get, "/ct/entries") => {
                let (start, end) = match (parse_u64(&params, "start"), parse_u64(&params, "end")) {
                    (Ok(s), Ok(e)) => (s, e),
                    (Err(e), _) | (_, Err(e)) => return json_error(400, &e),
                };
                let state = log.read().unwrap();
                match state.get_entries(start, end) {
                    Ok(entries) => ok_json(&EntriesResponse {
                        entries: entries.iter().map(EntryJson::from).collect(),
                    }),
                    Err(e) => json_error(404, &e.to_string()),
                }
            }
            (Method::Get, "/ct/proof/consistency") => {
                let (first, second) =
                    match (parse_u64(&params, "first"), parse_u64(&params, "second")) {
                        (Ok(f), Ok(s)) => (f, s),
                        (Err(e), _) | (_, Err(e)) => return json_error(400, &e),
                    };
                let state = log.read().unwrap();
                match state.consistency_proof(first, second) {
                    Ok(path) => ok_json(&ConsistencyResponse {
                        first,
                        second,
                        path: path.iter().map(|d| b64_encode(d.as_bytes())).collect(),
                    }),
                    Err(e) => json_error(404, &e.to_string()),
                }
            }
            (Method::Post, "/ct/submit") => {
                let req: SubmitRequest = match serde_json::from_slice(body) {
                    Ok(r) => r,
                    Err(e) => return json_error(400, &e.to_string()),
                };
                let blob = match b64_decode(&req.blob) {
                    Ok(b) => b,
                    Err(_) => return json_error(400, "blob is not base64"),
                };
                let mut state = log.write().unwrap();
                match state.submit(&req.subject, blob) {
                    Ok(seq) => ok_json(&SubmitResponse { seq }),
                    Err(e) => json_error(400, &e.to_string()),
                }
            }
            _ => json_error(404, "no such endpoint"),
        }
    })
}

/// Push target that POSTs notification bodies to a callback URL.
pub struct HttpPushTarget {
    url: String,
    agent: ureq::Agent,
}

impl HttpPushTarget {
    pub fn new(url: String) -> Self {
        HttpPushTarget {
            url,
            agent: agent(),
        }
    }
}

impl PushTarget for HttpPushTarget {
    fn deliver(&self, notification: &Notification) -> Result<(), ApiError> {
        let body = serde_json::to_string(&NotificationJson::from(notification))
            .expect("serializable");
        self.agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body)
            .map_err(|e| ApiError::Unreachable(e.to_string()))?;
        Ok(())
    }
}

/// Serve a notifier over HTTP. Polling stays the caller's business (see
/// [`spawn_poller`]).
pub fn serve_notifier(notifier: Arc<Notifier>, addr: &str) -> std::io::Result<HttpServer> {
    spawn_service(addr, 4, move |method, url, body| {
        let (path, params) = split_query(url);
        match (method, path) {
            (Method::Post, "/lwm/subscribe") => {
                let req: SubscribeRequest = match serde_json::from_slice(body) {
                    Ok(r) => r,
                    Err(e) => return json_error(400, &e.to_string()),
                };
                let query = match WildcardQuery::parse_with_apex(&req.query, req.apex_included) {
                    Ok(q) => q,
                    Err(e) => return json_error(400, &e.to_string()),
                };
                match notifier.subscribe(&query) {
                    Ok(sub) => {
                        if let Some(cb) = req.callback_url {
                            let _ = notifier
                                .register_push(&sub.id, Arc::new(HttpPushTarget::new(cb)));
                        }
                        ok_json(&SubscriptionInfo {
                            id: sub.id,
                            query: sub.query,
                            apex_included: sub.apex_included,
                        })
                    }
                    Err(e) => json_error(500, &e.to_string()),
                }
            }
            (Method::Delete, _) if path.starts_with("/lwm/subscribe/") => {
                let id = &path["/lwm/subscribe/".len()..];
                match notifier.unsubscribe(id) {
                    Ok(()) => (200, "{}".into()),
                    Err(e) => json_error(404, &e.to_string()),
                }
            }
            (Method::Get, "/lwm/new") => {
                let id = match params.get("id") {
                    Some(id) => id.clone(),
                    None => return json_error(400, "missing parameter id"),
                };
                let since = match params.get("since") {
                    Some(s) => match s.parse::<u64>() {
                        Ok(v) => Some(v),
                        Err(_) => return json_error(400, "parameter since is not an integer"),
                    },
                    None => None,
                };
                match notifier.whats_new(&id, since) {
                    Ok(list) => {
                        let out: Vec<NotificationJson> =
                            list.iter().map(NotificationJson::from).collect();
                        ok_json(&out)
                    }
                    Err(e) => notifier_error(e),
                }
            }
            (Method::Get, "/lwm/notification") => {
                let id = match params.get("id") {
                    Some(id) => id.clone(),
                    None => return json_error(400, "missing parameter id"),
                };
                let position = match parse_u64(&params, "sth_index") {
                    Ok(p) => p,
                    Err(e) => return json_error(400, &e),
                };
                match notifier.notification(&id, position) {
                    Ok(n) => ok_json(&NotificationJson::from(&n)),
                    Err(e) => notifier_error(e),
                }
            }
            _ => json_error(404, "no such endpoint"),
        }
    })
}

fn notifier_error(e: NotifierError) -> (u16, String) {
    let status = match &e {
        NotifierError::UnknownSubscription(_) | NotifierError::NotYetSeen { .. } => 404,
        NotifierError::BatchEvicted { .. } => 410,
        NotifierError::LogUnreachable(_) | NotifierError::IndexGapUnfillable { .. } => 502,
        _ => 500,
    };
    json_error(status, &e.to_string())
}

/// A bare push-callback receiver: any POST body is handed to `on_body`.
/// Subscribers register its URL as their push callback.
pub fn serve_callback<F>(addr: &str, on_body: F) -> std::io::Result<HttpServer>
where
    F: Fn(&str) + Send + Sync + 'static,
{
    spawn_service(addr, 2, move |method, _url, body| {
        if *method == Method::Post {
            on_body(&String::from_utf8_lossy(body));
            (200, "{}".into())
        } else {
            json_error(405, "POST only")
        }
    })
}

/// Run `notifier.poll` every `period` until `stop` flips.
pub fn spawn_poller(
    notifier: Arc<Notifier>,
    period: Duration,
    stop: Arc<AtomicBool>,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            let _ = notifier.poll(now_ms());
            std::thread::sleep(period);
        }
    })
}

fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(2))
        .timeout(Duration::from_secs(10))
        .build()
}

fn map_ureq(e: ureq::Error) -> ApiError {
    match e {
        ureq::Error::Status(404, r) => {
            ApiError::NotFound(r.status_text().to_string())
        }
        ureq::Error::Status(400, r) => {
            ApiError::BadRequest(r.status_text().to_string())
        }
        ureq::Error::Status(code, _) => ApiError::Unreachable(format!("http status {code}")),
        ureq::Error::Transport(t) => ApiError::Unreachable(t.to_string()),
    }
}

/// HTTP client for a log.
pub struct HttpLogClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpLogClient {
    pub fn new(base_url: &str) -> Self {
        HttpLogClient {
            base: base_url.trim_end_matches('/').to_string(),
            agent: agent(),
        }
    }

    pub fn submit(&self, subject: &str, blob: &[u8]) -> Result<u64, ApiError> {
        let req = SubmitRequest {
            subject: subject.to_string(),
            blob: b64_encode(blob),
        };
        let resp: SubmitResponse = self
            .agent
            .post(&format!("{}/ct/submit", self.base))
            .send_string(&serde_json::to_string(&req).unwrap())
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        Ok(resp.seq)
    }

    fn fetch_sth(&self, url: String) -> Result<SthResponse, ApiError> {
        self.agent
            .get(&url)
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))
    }
}

impl LogReader for HttpLogClient {
    fn sth_count(&self) -> Result<u64, ApiError> {
        match self.fetch_sth(format!("{}/ct/sth", self.base)) {
            Ok(resp) => Ok(resp.position + 1),
            Err(ApiError::NotFound(_)) => Ok(0),
            Err(e) => Err(e),
        }
    }

    fn sth_at(&self, position: u64) -> Result<SignedTreeHead, ApiError> {
        let resp = self.fetch_sth(format!("{}/ct/sth/{position}", self.base))?;
        SignedTreeHead::try_from(&resp.sth)
    }

    fn entries(&self, from: u64, to: u64) -> Result<Vec<LogEntry>, ApiError> {
        let resp: EntriesResponse = self
            .agent
            .get(&format!("{}/ct/entries?start={from}&end={to}", self.base))
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        resp.entries.iter().map(LogEntry::try_from).collect()
    }

    fn consistency(&self, first: u64, second: u64) -> Result<Vec<Digest>, ApiError> {
        let resp: ConsistencyResponse = self
            .agent
            .get(&format!(
                "{}/ct/proof/consistency?first={first}&second={second}",
                self.base
            ))
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        resp.path
            .iter()
            .map(|s| {
                let raw = b64_decode(s).map_err(|_| ApiError::Decode("digest".into()))?;
                Digest::from_slice(&raw).ok_or(ApiError::Decode("digest length".into()))
            })
            .collect()
    }
}

/// HTTP client for a notifier.
pub struct HttpNotifierClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpNotifierClient {
    pub fn new(base_url: &str) -> Self {
        HttpNotifierClient {
            base: base_url.trim_end_matches('/').to_string(),
            agent: agent(),
        }
    }

    pub fn subscribe_with_callback(
        &self,
        query: &WildcardQuery,
        callback_url: Option<String>,
    ) -> Result<SubscriptionInfo, ApiError> {
        let req = SubscribeRequest {
            query: query.as_str().to_string(),
            apex_included: query.apex_included(),
            callback_url,
        };
        self.agent
            .post(&format!("{}/lwm/subscribe", self.base))
            .send_string(&serde_json::to_string(&req).unwrap())
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))
    }
}

impl NotificationSource for HttpNotifierClient {
    fn subscribe(&self, query: &WildcardQuery) -> Result<SubscriptionInfo, ApiError> {
        self.subscribe_with_callback(query, None)
    }

    fn unsubscribe(&self, id: &str) -> Result<(), ApiError> {
        self.agent
            .delete(&format!("{}/lwm/subscribe/{id}", self.base))
            .call()
            .map_err(map_ureq)?;
        Ok(())
    }

    fn whats_new(&self, id: &str, since: Option<u64>) -> Result<Vec<Notification>, ApiError> {
        let url = match since {
            Some(s) => format!("{}/lwm/new?id={id}&since={s}", self.base),
            None => format!("{}/lwm/new?id={id}", self.base),
        };
        let resp: Vec<NotificationJson> = self
            .agent
            .get(&url)
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        resp.iter().map(Notification::try_from).collect()
    }

    fn notification(&self, id: &str, position: u64) -> Result<Notification, ApiError> {
        let resp: NotificationJson = self
            .agent
            .get(&format!(
                "{}/lwm/notification?id={id}&sth_index={position}",
                self.base
            ))
            .call()
            .map_err(map_ureq)?
            .into_json()
            .map_err(|e| ApiError::Decode(e.to_string()))?;
        Notification::try_from(&resp)
    }
}
