use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of `kind`, a newline, and the canonical JSON of `request`.
///
/// Canonical JSON is `serde_json`'s compact output of the typed request;
/// struct fields serialize in declaration order and maps are key-sorted.
pub fn fixture_key<T: Serialize + ?Sized>(kind: &str, request: &T) -> String {
    let json = serde_json::to_vec(request).expect("fixture requests serialize");
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(b"\n");
    hasher.update(&json);
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub v: u32,
    pub kind: String,
    pub key: String,
    pub request: Value,
    pub response: Value,
}

/// Hash-keyed response store, optionally persisted as one
/// `<key>.json` file per entry.
#[derive(Debug, Default)]
pub struct FixtureStore {
    dir: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, Fixture>>,
}

impl FixtureStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            entries: Mutex::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<Fixture>> {
        if let Some(hit) = self.entries.lock().unwrap().get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.path_for(key) else {
            return Ok(None);
        };
        match fs::read(&path) {
            Ok(bytes) => {
                let fixture: Fixture = serde_json::from_slice(&bytes)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                self.entries
                    .lock()
                    .unwrap()
                    .insert(key.to_string(), fixture.clone());
                Ok(Some(fixture))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &str, kind: &str, request: Value, response: Value) -> io::Result<()> {
        let fixture = Fixture {
            v: 1,
            kind: kind.to_string(),
            key: key.to_string(),
            request,
            response,
        };
        if let Some(path) = self.path_for(key) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut bytes = serde_json::to_vec_pretty(&fixture)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            bytes.push(b'\n');
            fs::write(path, bytes)?;
        }
        self.entries.lock().unwrap().insert(key.to_string(), fixture);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
