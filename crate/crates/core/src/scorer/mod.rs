//! Outcome scores: the grading prompt and response contract, a synthetic
//! scorer with known effects, and a cached chat-completions client.

mod cache;
mod remote;
mod synthetic;

pub use cache::{cache_key, CacheEntry, ScoreCache};
pub use remote::{score_remote, EndpointConfig, RemoteSummary, ScoreJob};
pub use synthetic::{
    censored_normal_mean, induced_scm, synthetic_oracle_effects, synthetic_score,
    SyntheticScorerParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TEMPLATE: &str =
    "You are a strict resume screening grader that grades resumes based on job descriptions.

Given a JOB DESCRIPTION and a RESUME, provide only a single score from 0 to 100.

Rules:
- Response format: {\"score\": XX.XX}
- Do NOT provide explanations or extra text.

JOB DESCRIPTION:
{job_text}

RESUME:
{resume_text}";

/// Instantiates the grading prompt. Substitution is single-pass: placeholder
/// text inside either input is left as is.
pub fn build_prompt(job_text: &str, resume_text: &str) -> Result<String> {
    if job_text.is_empty() || resume_text.is_empty() {
        return Err(Error::invalid("job and resume text must be non-empty"));
    }
    let (head, rest) = TEMPLATE.split_once("{job_text}").expect("template slot");
    let (mid, tail) = rest.split_once("{resume_text}").expect("template slot");
    let mut out = String::with_capacity(TEMPLATE.len() + job_text.len() + resume_text.len());
    out.push_str(head);
    out.push_str(job_text);
    out.push_str(mid);
    out.push_str(resume_text);
    out.push_str(tail);
    Ok(out)
}

fn as_score(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Extracts the score from the first JSON object carrying a `score` key.
pub fn parse_score(response: &str) -> Result<f64> {
    for (i, _) in response.match_indices('{') {
        let mut it =
            serde_json::Deserializer::from_str(&response[i..]).into_iter::<serde_json::Value>();
        let Some(Ok(serde_json::Value::Object(map))) = it.next() else {
            continue;
        };
        let Some(v) = map.get("score") else { continue };
        let Some(s) = as_score(v).filter(|s| s.is_finite()) else {
            return Err(Error::Parse(format!("score value {v} is not numeric")));
        };
        if !(0.0..=100.0).contains(&s) {
            return Err(Error::Range(s));
        }
        return Ok(s);
    }
    Err(Error::Parse(format!(
        "no score object in response {:?}",
        truncate(response, 120)
    )))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Outcome of scoring one resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub resume_id: String,
    pub scorer_id: String,
    /// Last raw response body content, if any arrived.
    pub raw_response: Option<String>,
    /// Present iff the response met the contract.
    pub score: Option<f64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub retries: u32,
    pub error: Option<String>,
}

impl ScoreRecord {
    pub fn succeeded(&self) -> bool {
        self.score.is_some()
    }
}

pub fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn write_score_records<W: std::io::Write>(mut w: W, records: &[ScoreRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_score_records<R: std::io::BufRead>(r: R) -> Result<Vec<ScoreRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_slots_and_single_pass() {
        let p = build_prompt("J", "R {job_text}").unwrap();
        assert!(p.contains("Response format: {\"score\": XX.XX}\n"));
        assert!(p.ends_with("JOB DESCRIPTION:\nJ\n\nRESUME:\nR {job_text}"));
        assert!(build_prompt("", "R").is_err());
        assert!(build_prompt("J", "").is_err());
    }

    #[test]
    fn nominal_parses() {
        assert_eq!(parse_score("{\"score\": 73.50}").unwrap(), 73.5);
        assert_eq!(parse_score("Sure! {\"score\": 88}").unwrap(), 88.0);
        assert!(matches!(
            parse_score("{\"score\": 140}"),
            Err(Error::Range(_))
        ));
        assert!(matches!(parse_score("no json"), Err(Error::Parse(_))));
    }
}
