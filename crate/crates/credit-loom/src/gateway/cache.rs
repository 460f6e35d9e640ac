//! Append-only record/replay cache keyed by request fingerprint.
//!
//! The on-disk form is JSONL: one `{fingerprint, request, response,
//! timestamp}` object per line. Reads are concurrent; writes are serialized
//! through the appender.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::CompletionRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Serve hits from the cache, send misses to the backend, persist results.
    Record,
    /// Serve exclusively from the cache; a miss is an error and the backend
    /// is never touched.
    ReplayStrict,
    /// Serve hits from the cache, fall through to the backend on a miss and
    /// persist what came back.
    ReplayFallthrough,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: String,
    request: CompletionRequest,
    response: String,
    timestamp: u64,
}

pub struct ReplayCache {
    mode: CacheMode,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    appender: Mutex<Option<File>>,
}

impl ReplayCache {
    /// Empty in-memory cache (useful for tests and call-count oracles).
    pub fn in_memory(mode: CacheMode) -> Self {
        ReplayCache {
            mode,
            path: None,
            entries: RwLock::new(HashMap::new()),
            appender: Mutex::new(None),
        }
    }

    /// Opens `path`, loading any existing entries. A missing file is fine
    /// for the recording modes and an error for replay-strict.
    pub fn open(path: &Path, mode: CacheMode) -> Result<Self> {
        let mut entries = HashMap::new();
        match File::open(path) {
            Ok(file) => {
                for (idx, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheEntry =
                        serde_json::from_str(&line).map_err(|e| Error::CacheIo {
                            path: path.display().to_string(),
                            detail: format!("line {}: {e}", idx + 1),
                        })?;
                    entries.insert(entry.fingerprint, entry.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if mode == CacheMode::ReplayStrict {
                    return Err(Error::CacheIo {
                        path: path.display().to_string(),
                        detail: "replay-strict requires an existing cache file".into(),
                    });
                }
            }
            Err(e) => return Err(Error::io(path.display().to_string(), e)),
        }
        Ok(ReplayCache {
            mode,
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            appender: Mutex::new(None),
        })
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock")
            .get(fingerprint)
            .cloned()
    }

    pub fn put(
        &self,
        fingerprint: &str,
        request: &CompletionRequest,
        response: &str,
    ) -> Result<()> {
        self.entries
            .write()
            .expect("cache lock")
            .insert(fingerprint.to_string(), response.to_string());
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut appender = self.appender.lock().expect("appender lock");
        if appender.is_none() {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| Error::io(parent.display().to_string(), e))?;
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            *appender = Some(file);
        }
        let entry = CacheEntry {
            fingerprint: fingerprint.to_string(),
            request: request.clone(),
            response: response.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let file = appender.as_mut().expect("appender opened");
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallTag, CallerKind};

    fn request() -> CompletionRequest {
        CompletionRequest {
            system_text: "s".into(),
            user_text: "u".into(),
            temperature: 0.0,
            max_tokens: 16,
            tag: CallTag::new(CallerKind::Critic),
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ReplayCache::open(&path, CacheMode::Record).unwrap();
        cache.put("fp-1", &request(), "hello").unwrap();
        cache.put("fp-2", &request(), "world").unwrap();

        let reloaded = ReplayCache::open(&path, CacheMode::ReplayStrict).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get("fp-1").as_deref(), Some("hello"));
        assert_eq!(reloaded.get("missing"), None);
    }

    #[test]
    fn replay_strict_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.jsonl");
        assert!(ReplayCache::open(&path, CacheMode::ReplayStrict).is_err());
        assert!(ReplayCache::open(&path, CacheMode::Record).is_ok());
    }
}
