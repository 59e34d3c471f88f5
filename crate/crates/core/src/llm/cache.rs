//! Append-only response cache, one JSON record per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    model: String,
    prompt_hash: String,
    response: String,
    timestamp: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub entries: usize,
}

pub fn cache_key(model_id: &str, prompt_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(prompt_hash.as_bytes());
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
    file: Mutex<File>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ResponseCache {
    /// Opens (creating if needed) the cache file and indexes its records.
    /// Later records win over earlier ones with the same key.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let io = |line: usize, e: &dyn std::fmt::Display| LlmError::CacheIo {
            path: path.to_owned(),
            line,
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io(0, &e))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| io(0, &e))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| io(i + 1, &e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| io(i + 1, &e))?;
                if rec.key != cache_key(&rec.model, &rec.prompt_hash) {
                    return Err(io(i + 1, &"key does not match model and prompt hash"));
                }
                entries.insert(rec.key, rec.response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io(0, &e))?;
        Ok(ResponseCache {
            path: path.to_owned(),
            entries: Mutex::new(entries),
            file: Mutex::new(file),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, model_id: &str, prompt_hash: &str) -> Option<String> {
        let key = cache_key(model_id, prompt_hash);
        let found = self.entries.lock().unwrap().get(&key).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn put(&self, model_id: &str, prompt_hash: &str, response: &str) -> Result<(), LlmError> {
        let key = cache_key(model_id, prompt_hash);
        let record = CacheRecord {
            key: key.clone(),
            model: model_id.to_owned(),
            prompt_hash: prompt_hash.to_owned(),
            response: response.to_owned(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_string(&record).expect("cache record serializes");
        line.push('\n');
        {
            // single write per record keeps concurrent appends whole
            let mut file = self.file.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| LlmError::CacheIo {
                    path: self.path.clone(),
                    line: 0,
                    message: e.to_string(),
                })?;
        }
        self.entries
            .lock()
            .unwrap()
            .insert(key, response.to_owned());
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.lock().unwrap().len(),
        }
    }
}
