//! Flat TOML key/value configuration for the serve commands. Every value
//! is optional; explicit command-line flags take precedence.

use std::path::{Path, PathBuf};

/// A parsed config file, or an empty one when no path was given.
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Box<dyn std::error::Error>> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                text.parse::<toml::Table>()?
            }
            None => toml::Table::new(),
        };
        Ok(ConfigFile { table })
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.table.get(key)?.as_str().map(str::to_string)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.string(key).map(PathBuf::from)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.table.get(key)?.as_integer().map(|v| v as u64)
    }
}
