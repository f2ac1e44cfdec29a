//! Content-addressed stage results under `<root>/<sha256>/`.
//!
//! A stage is complete once `result.json` exists in its directory. Writes go
//! through a uniquely named temporary file and a rename, so concurrent
//! writers of distinct keys never observe partial files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const RESULT_FILE: &str = "result.json";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Hex SHA-256 of the JSON config, stage name and parameter.
    pub fn key(config: &impl Serialize, stage: &str, param: &str) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(config)?);
        h.update([0u8]);
        h.update(stage.as_bytes());
        h.update([0u8]);
        h.update(param.as_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Directory for artifacts of `key`, created on demand.
    pub fn dir(&self, key: &str) -> Result<PathBuf> {
        let d = self.root.join(key);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn is_complete(&self, key: &str) -> bool {
        self.root.join(key).join(RESULT_FILE).is_file()
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let path = self.root.join(key).join(RESULT_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        let dir = self.dir(key)?;
        write_atomic(&dir.join(RESULT_FILE), &serde_json::to_vec_pretty(value)?)
    }
}

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
