use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, Result};
use audit_core::dml::EffectEstimate;
use audit_core::estimands::Effect;
use serde::{Deserialize, Serialize};

use crate::stages::{
    read_json, write_atomic, write_json, CaseRow, Estimates, Run, CASES, ESTIMATES,
};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const SERIES_CSV: &str = "series.csv";

/// Column order of the effect tables.
pub const COLUMNS: [Effect; 5] = [
    Effect::Te,
    Effect::Nde,
    Effect::Nie,
    Effect::Rie,
    Effect::Bie,
];

#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub config_path: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub folds: usize,
    pub bootstrap_draws: usize,
    pub level: f64,
    pub crossfit_seeds: Vec<(String, u64)>,
    pub bootstrap_seeds: Vec<(String, u64)>,
    pub learner: String,
    pub corrupt: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub occupation: String,
    pub n: usize,
    pub effects: Vec<(Effect, EffectEstimate)>,
    pub case: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub occupation: String,
    pub effect: Effect,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub significant: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub provenance: Provenance,
    pub rows: Vec<TableRow>,
    pub series: Vec<SeriesPoint>,
    pub estimates: Estimates,
}

fn cell(e: &EffectEstimate) -> String {
    let mark = if e.significant { "*" } else { "" };
    format!("{:.2}{mark} [{:.2}, {:.2}]", e.estimate, e.ci_lo, e.ci_hi)
}

pub fn build(run: &Run, est: Estimates, cases: Vec<CaseRow>) -> Result<Report> {
    if cases.len() != est.occupations.len()
        || cases
            .iter()
            .zip(&est.occupations)
            .any(|(c, o)| c.occupation != o.occupation)
    {
        bail!("{CASES} does not match {ESTIMATES}; rerun `classify`");
    }
    let first = est.occupations.first().map(|o| &o.report.meta);
    let provenance = Provenance {
        config_path: run.loaded.path.display().to_string(),
        config_hash: est.config_hash.clone(),
        seed: est.seed,
        version: est.version.clone(),
        folds: first.map_or(0, |m| m.folds),
        bootstrap_draws: first.map_or(0, |m| m.bootstrap_draws),
        level: first.map_or(0.0, |m| m.level),
        crossfit_seeds: est
            .occupations
            .iter()
            .map(|o| (o.occupation.clone(), o.report.meta.crossfit_seed))
            .collect(),
        bootstrap_seeds: est
            .occupations
            .iter()
            .map(|o| (o.occupation.clone(), o.report.meta.bootstrap_seed))
            .collect(),
        learner: first.map_or_else(String::new, |m| m.outcome_learner.clone()),
        corrupt: est.corrupt.map(|c| format!("{c:?}")),
    };
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (o, c) in est.occupations.iter().zip(&cases) {
        let effects: Vec<(Effect, EffectEstimate)> = COLUMNS
            .iter()
            .map(|&e| (e, *o.report.effects.get(e)))
            .collect();
        for (e, v) in &effects {
            series.push(SeriesPoint {
                occupation: o.occupation.clone(),
                effect: *e,
                estimate: v.estimate,
                ci_lo: v.ci_lo,
                ci_hi: v.ci_hi,
                significant: v.significant,
            });
        }
        rows.push(TableRow {
            occupation: o.occupation.clone(),
            n: o.n_scored,
            effects,
            case: c.display.clone(),
        });
    }
    Ok(Report {
        title: format!("x0 = {}, x1 = {} ({})", est.x0, est.x1, est.protected),
        provenance,
        rows,
        series,
        estimates: est,
    })
}

pub fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let p = &r.provenance;
    let _ = writeln!(out, "Path-specific effects, {}", r.title);
    let _ = writeln!(out, "config {} (sha256 {})", p.config_path, p.config_hash);
    let _ = writeln!(
        out,
        "seed {}, version {}, {} folds, {} bootstrap draws, {:.0}% intervals",
        p.seed,
        p.version,
        p.folds,
        p.bootstrap_draws,
        100.0 * p.level
    );
    let _ = writeln!(out, "learner {}", p.learner);
    if let Some(c) = &p.corrupt {
        let _ = writeln!(out, "NUISANCE CORRUPTION ACTIVE: {c}");
    }
    let _ = writeln!(out, "* marks intervals that exclude zero\n");
    let mut header = vec!["Occupation".to_string(), "n".to_string()];
    header.extend(COLUMNS.iter().map(|e| e.to_string()));
    header.push("Case".into());
    let mut table = vec![header];
    for row in &r.rows {
        let mut line = vec![row.occupation.clone(), row.n.to_string()];
        line.extend(row.effects.iter().map(|(_, e)| cell(e)));
        line.push(row.case.clone());
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| {
            table
                .iter()
                .map(|l| l[j].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    for (i, line) in table.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}

pub fn cmd_report(run: &Run) -> Result<String> {
    let est: Estimates = read_json(&run.path(ESTIMATES))?;
    let cases: Vec<CaseRow> = read_json(&run.path(CASES))?;
    let report = build(run, est, cases)?;
    write_json(&run.path(REPORT_JSON), &report)?;
    let text = render_text(&report);
    write_atomic(&run.path(REPORT_TXT), |w| Ok(w.write_all(text.as_bytes())?))?;
    write_atomic(&run.path(SERIES_CSV), |w| {
        writeln!(w, "occupation,effect,estimate,ci_lo,ci_hi,significant")?;
        for s in &report.series {
            writeln!(
                w,
                "\"{}\",{},{},{},{},{}",
                s.occupation.replace('"', "\"\""),
                s.effect,
                s.estimate,
                s.ci_lo,
                s.ci_hi,
                s.significant
            )?;
        }
        Ok(())
    })?;
    Ok(text)
}
