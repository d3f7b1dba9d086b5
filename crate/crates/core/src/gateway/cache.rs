use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::EndpointKind;

pub const CACHE_FILE: &str = "gateway-cache.jsonl";

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    value: Value,
}

/// Content-addressed response cache. When opened on a directory every
/// insert is appended to a JSONL file, and reopening replays it.
pub struct ResponseCache {
    enabled: bool,
    map: RwLock<HashMap<String, Value>>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            map: RwLock::new(HashMap::new()),
            log: None,
            path: None,
        }
    }

    pub fn in_memory() -> Self {
        Self {
            enabled: true,
            ..Self::disabled()
        }
    }

    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut map = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                // a torn final line from an interrupted run is ignored
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line?) {
                    map.insert(entry.key, entry.value);
                }
            }
        }
        let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
        let existing = std::fs::read(&path)?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            log.write_all(b"\n")?;
        }
        Ok(Self {
            enabled: true,
            map: RwLock::new(map),
            log: Some(Mutex::new(log)),
            path: Some(path),
        })
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        if !self.enabled {
            return None;
        }
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: String, value: Value) {
        if !self.enabled {
            return;
        }
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                value: value.clone(),
            })
            .expect("cache line serializes");
            let mut f = log.lock().unwrap();
            // persistence is best-effort; the in-memory entry is authoritative
            let _ = writeln!(f, "{line}");
        }
        self.map.write().unwrap().insert(key, value);
    }
}

/// SHA-256 over the canonical JSON of `(kind, model, payload)`. Object keys
/// serialize sorted, so the encoding is canonical.
pub fn cache_key(kind: EndpointKind, model_id: &str, payload: &Value) -> String {
    let canonical = json!({ "kind": kind, "model": model_id, "payload": payload });
    hex_digest(canonical.to_string().as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
