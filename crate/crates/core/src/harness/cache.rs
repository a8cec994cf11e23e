//! On-disk result cache: one JSON file per key, written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::HarnessError;

/// SHA-256 over the parts, each terminated by a unit separator.
pub fn cache_key(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(Cache { dir: dir.to_path_buf() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// `None` on a miss. An unreadable entry counts as a miss.
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text).ok()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(HarnessError::io(&path, e)),
        }
    }

    /// Writes to a temporary file in the cache directory, then renames it
    /// over the final path.
    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<(), HarnessError> {
        let path = self.path(key);
        let json = serde_json::to_vec_pretty(value).expect("cache value serializes");
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| HarnessError::io(&self.dir, e))?;
        tmp.write_all(&json).map_err(|e| HarnessError::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| HarnessError::io(&path, e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|d| {
                d.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
