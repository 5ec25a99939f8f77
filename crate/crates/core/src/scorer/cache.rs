use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 over the scorer id and the full prompt.
pub fn cache_key(scorer_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(scorer_id.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub scorer_id: String,
    pub raw_response: String,
    pub score: f64,
    pub timestamp: u64,
}

/// Append-only line-delimited cache of successful scores. Lookups are served
/// from memory; all appends go through one writer.
#[derive(Debug)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl ScoreCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        ScoreCache {
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) a cache file. Later lines win over earlier
    /// ones with the same key; a torn final line is ignored.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path)?)
                .lines()
                .collect::<std::io::Result<_>>()?;
            let n = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key.clone(), e);
                    }
                    Err(_) if i + 1 == n => {}
                    Err(e) => {
                        return Err(Error::Parse(format!(
                            "{} line {}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ScoreCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Rewrites the file with one line per key, sorted by key.
    pub fn compact(&self) -> Result<usize> {
        let Some(path) = &self.path else {
            return Ok(self.len());
        };
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
        let entries = self.entries.lock().expect("cache lock");
        let mut sorted: Vec<&CacheEntry> = entries.values().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        let tmp = path.with_extension("compact.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for e in &sorted {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        *writer = Some(BufWriter::new(OpenOptions::new().append(true).open(path)?));
        Ok(sorted.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, score: f64) -> CacheEntry {
        CacheEntry {
            key: key.into(),
            scorer_id: "m".into(),
            raw_response: format!("{{\"score\": {score}}}"),
            score,
            timestamp: 0,
        }
    }

    #[test]
    fn keys_depend_on_scorer_and_prompt() {
        assert_ne!(cache_key("a", "p"), cache_key("b", "p"));
        assert_ne!(cache_key("a", "p"), cache_key("a", "q"));
        assert_eq!(cache_key("a", "p").len(), 64);
    }

    #[test]
    fn reopen_and_compact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ScoreCache::open(&path).unwrap();
            c.insert(entry("k1", 1.0)).unwrap();
            c.insert(entry("k2", 2.0)).unwrap();
            c.insert(entry("k1", 3.0)).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"key\": \"tor")
            .unwrap();
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k1").unwrap().score, 3.0);
        assert_eq!(c.compact().unwrap(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        c.insert(entry("k3", 4.0)).unwrap();
        assert_eq!(ScoreCache::open(&path).unwrap().len(), 3);
    }
}
