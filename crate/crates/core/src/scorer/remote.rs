use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, CacheEntry, ScoreCache};
use super::{now_secs, parse_score, ScoreRecord};
use crate::error::{Error, Result};

/// An OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token, if the endpoint wants one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_temperature")]
    pub temperature: Option<f64>,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_concurrency() -> usize {
    4
}
fn default_temperature() -> Option<f64> {
    Some(0.0)
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            concurrency: default_concurrency(),
            temperature: default_temperature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config("endpoint model is empty".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config(
                "endpoint concurrency must be at least 1".into(),
            ));
        }
        if let Some(var) = &self.api_key_env {
            if std::env::var(var).is_err() {
                return Err(Error::Config(format!(
                    "environment variable {var} is not set"
                )));
            }
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreJob {
    pub resume_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteSummary {
    pub jobs: usize,
    pub cache_hits: usize,
    /// HTTP requests actually sent, retries included.
    pub requests: usize,
    pub retries: usize,
    pub failures: usize,
}

enum Attempt {
    Scored(String, f64),
    /// Response arrived but broke the contract; retrying may help.
    Retry(Option<String>, Error),
    /// Response arrived with an out-of-range score; final.
    Final(String, Error),
}

fn request(
    client: &reqwest::blocking::Client,
    cfg: &EndpointConfig,
    key: Option<&str>,
    prompt: &str,
) -> Attempt {
    let mut body = serde_json::json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
    });
    if let Some(t) = cfg.temperature {
        body["temperature"] = serde_json::json!(t);
    }
    let mut req = client.post(cfg.url()).json(&body);
    if let Some(k) = key {
        req = req.bearer_auth(k);
    }
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(None, Error::Transport(e.to_string())),
    };
    let status = resp.status();
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(None, Error::Transport(e.to_string())),
    };
    if !status.is_success() {
        return Attempt::Retry(None, Error::Transport(format!("HTTP {status}")));
    }
    let content = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| {
            v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
        });
    let Some(content) = content else {
        return Attempt::Retry(
            None,
            Error::Parse("response has no choices[0].message.content".into()),
        );
    };
    match parse_score(&content) {
        Ok(s) => Attempt::Scored(content, s),
        Err(e @ Error::Range(_)) => Attempt::Final(content, e),
        Err(e) => Attempt::Retry(Some(content), e),
    }
}

/// Scores every job, serving repeats from the cache and writing successes
/// back to it. Records come back in job order.
pub fn score_remote(
    jobs: &[ScoreJob],
    cfg: &EndpointConfig,
    cache: &ScoreCache,
) -> Result<(Vec<ScoreRecord>, RemoteSummary)> {
    let scorer_id = cfg.model.as_str();
    let keys: Vec<String> = jobs
        .iter()
        .map(|j| cache_key(scorer_id, &j.prompt))
        .collect();
    let mut records: Vec<Option<ScoreRecord>> = vec![None; jobs.len()];
    let mut pending = Vec::new();
    let mut summary = RemoteSummary {
        jobs: jobs.len(),
        ..RemoteSummary::default()
    };
    for (i, (job, key)) in jobs.iter().zip(&keys).enumerate() {
        match cache.get(key) {
            Some(hit) => {
                summary.cache_hits += 1;
                records[i] = Some(ScoreRecord {
                    resume_id: job.resume_id.clone(),
                    scorer_id: scorer_id.to_string(),
                    raw_response: Some(hit.raw_response),
                    score: Some(hit.score),
                    timestamp: hit.timestamp,
                    retries: 0,
                    error: None,
                });
            }
            None => pending.push(i),
        }
    }
    if !pending.is_empty() {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| Error::Config(format!("{var} is not set")))?)
            }
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let next = AtomicUsize::new(0);
        let requests = AtomicUsize::new(0);
        let done = Mutex::new(Vec::with_capacity(pending.len()));
        let cache_err = Mutex::new(None);
        std::thread::scope(|s| {
            for _ in 0..cfg.concurrency.min(pending.len()) {
                s.spawn(|| loop {
                    let slot = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&i) = pending.get(slot) else { break };
                    let job = &jobs[i];
                    let mut retries = 0;
                    let record = loop {
                        requests.fetch_add(1, Ordering::Relaxed);
                        let (raw, score, error) =
                            match request(&client, cfg, api_key.as_deref(), &job.prompt) {
                                Attempt::Scored(raw, s) => (Some(raw), Some(s), None),
                                Attempt::Final(raw, e) => (Some(raw), None, Some(e)),
                                Attempt::Retry(..) if retries < cfg.max_retries => {
                                    std::thread::sleep(Duration::from_millis(
                                        cfg.backoff_ms << retries.min(16),
                                    ));
                                    retries += 1;
                                    continue;
                                }
                                Attempt::Retry(raw, e) => (raw, None, Some(e)),
                            };
                        break ScoreRecord {
                            resume_id: job.resume_id.clone(),
                            scorer_id: scorer_id.to_string(),
                            raw_response: raw,
                            score,
                            timestamp: now_secs(),
                            retries,
                            error: error.map(|e| e.to_string()),
                        };
                    };
                    if let (Some(score), Some(raw)) = (record.score, &record.raw_response) {
                        let entry = CacheEntry {
                            key: keys[i].clone(),
                            scorer_id: scorer_id.to_string(),
                            raw_response: raw.clone(),
                            score,
                            timestamp: record.timestamp,
                        };
                        if let Err(e) = cache.insert(entry) {
                            cache_err.lock().expect("error slot").get_or_insert(e);
                        }
                    }
                    done.lock().expect("results").push((i, record));
                });
            }
        });
        if let Some(e) = cache_err.into_inner().expect("error slot") {
            return Err(e);
        }
        summary.requests = requests.into_inner();
        for (i, r) in done.into_inner().expect("results") {
            summary.retries += r.retries as usize;
            records[i] = Some(r);
        }
    }
    let records: Vec<ScoreRecord> = records
        .into_iter()
        .map(|r| r.expect("every job scored"))
        .collect();
    summary.failures = records.iter().filter(|r| !r.succeeded()).count();
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_cached_needs_no_endpoint() {
        let cache = ScoreCache::in_memory();
        let cfg = EndpointConfig::new("", "m");
        let job = ScoreJob {
            resume_id: "r".into(),
            prompt: "p".into(),
        };
        cache
            .insert(CacheEntry {
                key: cache_key("m", "p"),
                scorer_id: "m".into(),
                raw_response: "{\"score\": 5}".into(),
                score: 5.0,
                timestamp: 1,
            })
            .unwrap();
        let (recs, sum) = score_remote(&[job.clone()], &cfg, &cache).unwrap();
        assert_eq!(recs[0].score, Some(5.0));
        assert_eq!(sum.requests, 0);
        let err = score_remote(
            &[ScoreJob {
                prompt: "q".into(),
                ..job
            }],
            &cfg,
            &cache,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
