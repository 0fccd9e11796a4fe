//! End-to-end exercise of the HTTP surfaces: a real log server and a real
//! notifier server on loopback, driven through the HTTP clients only.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use ed25519_dalek::SigningKey;
use lwm::api::{LogReader, NotificationSource};
use lwm::http::{serve_log, serve_notifier, HttpLogClient, HttpNotifierClient, HttpServer};
use lwm::logsim::LogState;
use lwm::notifier::{Notifier, NotifierConfig};
use lwm::omega::WildcardQuery;
use lwm::rfc6962;
use lwm::subject::{SubjectConfig, SubjectState, Verdict};
use tiny_http_like::receive_push;

const HOUR: u64 = 3_600_000;

fn start_log() -> (Arc<RwLock<LogState>>, HttpServer) {
    let state = Arc::new(RwLock::new(
        LogState::ephemeral(SigningKey::from_bytes(&[21u8; 32]), HOUR).with_rng_seed(6),
    ));
    let server = serve_log(state.clone(), "127.0.0.1:0").unwrap();
    (state, server)
}

#[test]
fn log_endpoints_round_trip() {
    let (state, server) = start_log();
    let client = HttpLogClient::new(&server.base_url());

    // Empty log: no sth yet.
    assert_eq!(client.sth_count().unwrap(), 0);
    assert!(client.latest_sth().unwrap().is_none());

    // Submit over HTTP, issue heads directly, read back over HTTP.
    assert_eq!(client.submit("a.example.com", b"cert-a").unwrap(), 0);
    assert_eq!(client.submit("b.example.org", b"cert-b").unwrap(), 1);
    state.write().unwrap().issue_sth(0).unwrap();
    client.submit("c.example.net", b"cert-c").unwrap();
    state.write().unwrap().issue_sth(HOUR).unwrap();

    assert_eq!(client.sth_count().unwrap(), 2);
    let s0 = client.sth_at(0).unwrap();
    let s1 = client.sth_at(1).unwrap();
    let key = state.read().unwrap().public_key();
    assert!(s0.verify_signature(&key));
    assert!(s1.verify_signature(&key));
    assert_eq!(s0.index(), Some(0));
    assert_eq!(s1.index(), Some(1));

    let entries = client.entries(0, 3).unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[2].subject.as_str(), "c.example.net");

    let proof = client.consistency(s0.tree_size, s1.tree_size).unwrap();
    assert!(rfc6962::verify_consistency(
        s0.tree_size,
        s1.tree_size,
        &proof,
        &s0.main_root,
        &s1.main_root
    ));

    // Error paths surface as client errors, not panics.
    assert!(client.sth_at(9).is_err());
    assert!(client.entries(2, 1).is_err());
    assert!(client.submit("not a name!", b"x").is_err());
}

#[test]
fn notifier_endpoints_and_subject_verification() {
    let (state, log_server) = start_log();
    let key = state.read().unwrap().public_key();
    let log_client = HttpLogClient::new(&log_server.base_url());

    log_client.submit("pay.shop.example", b"cert-pay").unwrap();
    log_client.submit("unrelated.org", b"cert-x").unwrap();
    state.write().unwrap().issue_sth(0).unwrap();

    // Notifier reads the log over HTTP as well.
    let notifier = Arc::new(
        Notifier::new(
            Arc::new(HttpLogClient::new(&log_server.base_url())),
            NotifierConfig::default(),
        )
        .unwrap(),
    );
    let notifier_server = serve_notifier(notifier.clone(), "127.0.0.1:0").unwrap();
    notifier.poll(0).unwrap();

    let client = HttpNotifierClient::new(&notifier_server.base_url());
    let query = WildcardQuery::parse("*.shop.example").unwrap();
    let sub = client.subscribe(&query).unwrap();

    let list = client.whats_new(&sub.id, None).unwrap();
    assert_eq!(list.len(), 1);
    let single = client.notification(&sub.id, 0).unwrap();
    assert_eq!(single.position, 0);

    let mut subject = SubjectState::new(key, query, SubjectConfig::default());
    match subject.verify_notification(0, &single).unwrap() {
        Verdict::Accepted(matches) => {
            assert_eq!(matches.len(), 1);
            assert_eq!(matches[0].0.as_str(), "pay.shop.example");
            assert_eq!(matches[0].1, vec![b"cert-pay".to_vec()]);
        }
        Verdict::Duplicate => panic!("not a duplicate"),
    }

    // Unsubscribe; further queries 404.
    client.unsubscribe(&sub.id).unwrap();
    assert!(client.whats_new(&sub.id, None).is_err());

    // More heads appear; a new subscription pulls them with `since`.
    state.write().unwrap().issue_sth(HOUR).unwrap();
    notifier.poll(HOUR).unwrap();
    let sub2 = client.subscribe(subject.query()).unwrap();
    assert_eq!(client.whats_new(&sub2.id, Some(0)).unwrap().len(), 1);
    assert!(client.whats_new(&sub2.id, Some(1)).unwrap().is_empty());
}

#[test]
fn push_callback_delivers_over_http() {
    let (state, log_server) = start_log();
    log_server.base_url();
    let log_client = HttpLogClient::new(&log_server.base_url());
    log_client.submit("a.push.example", b"cert").unwrap();
    state.write().unwrap().issue_sth(0).unwrap();

    let notifier = Arc::new(
        Notifier::new(
            Arc::new(HttpLogClient::new(&log_server.base_url())),
            NotifierConfig::default(),
        )
        .unwrap(),
    );
    let notifier_server = serve_notifier(notifier.clone(), "127.0.0.1:0").unwrap();

    // A tiny callback receiver.
    let (callback_url, received, _receiver) = receive_push();

    let client = HttpNotifierClient::new(&notifier_server.base_url());
    let query = WildcardQuery::parse("*.push.example").unwrap();
    client
        .subscribe_with_callback(&query, Some(callback_url))
        .unwrap();

    notifier.poll(0).unwrap();
    // Poll delivery is synchronous; the callback must have fired once.
    assert_eq!(received.load(Ordering::SeqCst), 1);
    notifier.poll(0).unwrap();
    assert_eq!(received.load(Ordering::SeqCst), 1);
}

/// Minimal push-callback receiver used by the push test.
mod tiny_http_like {
    use super::*;

    pub fn receive_push() -> (String, Arc<AtomicUsize>, lwm::http::HttpServer) {
        let counter = Arc::new(AtomicUsize::new(0));
        let bodies: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
        let server = {
            let counter = counter.clone();
            let bodies = bodies.clone();
            lwm::http::serve_callback("127.0.0.1:0", move |body| {
                counter.fetch_add(1, Ordering::SeqCst);
                bodies.lock().unwrap().push(body.to_string());
            })
            .unwrap()
        };
        let url = format!("{}/callback", server.base_url());
        (url, counter, server)
    }
}
