//! Discrimination-pattern labels derived from effect significance and signs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dml::EffectReport;
use crate::error::{Error, Result};
use crate::estimands::{Effect, Effects};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    C1,
    C2,
    C3,
    C4,
    C5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum C5Mode {
    Cancellation,
    Amplification,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub cases: BTreeSet<Case>,
    pub c5_mode: C5Mode,
}

/// Point estimate plus significance flag for one effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseCell {
    pub point: f64,
    pub significant: Option<bool>,
}

impl From<&EffectReport> for Effects<CaseCell> {
    fn from(r: &EffectReport) -> Self {
        r.effects.map(|_, e| CaseCell {
            point: e.estimate,
            significant: Some(e.significant),
        })
    }
}

pub fn classify(cells: &Effects<CaseCell>) -> Result<CaseLabel> {
    let mut sig = [false; 5];
    for (k, e) in Effect::ALL.into_iter().enumerate() {
        sig[k] = cells
            .get(e)
            .significant
            .ok_or_else(|| Error::invalid(format!("missing significance flag for {e}")))?;
    }
    let [te, nde, nie, bie, rie] = sig;
    let point = |e: Effect| cells.get(e).point;

    let mut cases = BTreeSet::new();
    if nde {
        cases.insert(Case::C1);
    }
    if !te && nde && nie && point(Effect::Nde) * point(Effect::Nie) < 0.0 {
        cases.insert(Case::C2);
    }
    if !nde && nie && !rie && bie {
        cases.insert(Case::C3);
    }
    if !nde && nie && !bie && rie {
        cases.insert(Case::C4);
    }
    let mut c5_mode = C5Mode::None;
    if bie && rie {
        cases.insert(Case::C5);
        c5_mode = if point(Effect::Bie) * point(Effect::Rie) < 0.0 {
            C5Mode::Cancellation
        } else {
            C5Mode::Amplification
        };
    }
    Ok(CaseLabel { cases, c5_mode })
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.cases.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = self.cases.iter().map(|c| format!("{c:?}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C1" => Ok(Case::C1),
            "C2" => Ok(Case::C2),
            "C3" => Ok(Case::C3),
            "C4" => Ok(Case::C4),
            "C5" => Ok(Case::C5),
            other => Err(Error::Unknown {
                kind: "case",
                value: other.to_string(),
            }),
        }
    }
}

/// Parse a printed case column such as `"C1, C5"` or `"-"`.
pub fn parse_cases(s: &str) -> Result<BTreeSet<Case>> {
    let s = s.trim();
    if s == "-" || s.is_empty() {
        return Ok(BTreeSet::new());
    }
    s.split(',').map(str::parse).collect()
}
