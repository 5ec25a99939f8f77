use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use audit_core::dml::{Corruption, EffectReport};
use audit_core::estimands::{Effect, EffectSet};
use audit_core::popgen::build_p1_sampler;
use audit_core::scorer::{induced_scm, synthetic_oracle_effects};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, Preset, ScorerConfig};
use crate::stages::{
    draw, estimate_one, feature_context, features, fit_population, synthetic_scores, write_json,
    EstimateSeeds, Run,
};

pub const VALIDATION_JSON: &str = "validation.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectCheck {
    pub effect: Effect,
    pub oracle: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `|estimate - oracle| / std_error`.
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub occupation: String,
    pub parameterization: Preset,
    pub n: usize,
    pub checks: Vec<EffectCheck>,
    pub additivity: bool,
    pub pass: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub config_hash: String,
    pub seed: u64,
    pub tolerance_se: f64,
    pub corrupt: Option<Corruption>,
    pub results: Vec<CaseResult>,
    pub pass: bool,
}

/// Distance in representable doubles.
pub fn ulps(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

pub fn additivity_holds(e: &EffectSet) -> bool {
    ulps(e.te, e.nde + e.nie) <= 4 && ulps(e.nie, e.bie + e.rie) <= 4
}

pub fn compare(report: &EffectReport, oracle: &EffectSet, tolerance: f64) -> Vec<EffectCheck> {
    Effect::ALL
        .iter()
        .map(|&e| {
            let est = report.effects.get(e);
            let diff = (est.estimate - oracle.get(e)).abs();
            let z = if est.std_error > 0.0 {
                diff / est.std_error
            } else if diff <= 1e-9 {
                0.0
            } else {
                f64::INFINITY
            };
            EffectCheck {
                effect: e,
                oracle: *oracle.get(e),
                estimate: est.estimate,
                std_error: est.std_error,
                z,
                pass: z <= tolerance,
            }
        })
        .collect()
}

pub fn run_validation(run: &Run, corrupt: Option<Corruption>) -> Result<ValidationSummary> {
    let cfg = run.cfg();
    if !matches!(cfg.scorer, ScorerConfig::Synthetic { .. }) {
        bail!("validate-synthetic needs scorer.kind = \"synthetic\"");
    }
    let v = &cfg.validation;
    if v.parameterizations.is_empty() {
        bail!("validation.parameterizations is empty");
    }
    let sources = run.sources()?;
    let pop = fit_population(&sources, run.factory())?;
    let ctx = feature_context(cfg, &sources, &cfg.grouping);
    let mut results = Vec::new();
    for o in &cfg.occupations {
        let profiles = draw(&sources, &pop, &o.name, o.count, cfg.seed)?;
        let feats = features(&ctx, &profiles)?;
        let rows = build_p1_sampler(&sources.pums, &o.name)?;
        for &preset in &v.parameterizations {
            let start = std::time::Instant::now();
            let params = preset.params(v.x_shift);
            let scm = induced_scm(
                &params,
                &ctx,
                rows.rows(),
                &pop.model,
                &pop.first,
                &pop.last,
            )
            .with_context(|| format!("oracle model for {} / {}", o.name, preset.label()))?;
            let oracle = synthetic_oracle_effects(&scm)?;
            let label = format!("validate:{}:{}", o.name, preset.label());
            let ys = synthetic_scores(&feats, &params, derive_seed(cfg.seed, &label))?;
            let (report, _) = estimate_one(
                cfg,
                &feats,
                &ys,
                &EstimateSeeds::new(cfg.seed, &label),
                corrupt,
            )?;
            let checks = compare(&report, &oracle, v.se_tolerance);
            let additivity = additivity_holds(&report.point_estimates());
            let pass = additivity && checks.iter().all(|c| c.pass);
            results.push(CaseResult {
                occupation: o.name.clone(),
                parameterization: preset,
                n: feats.len(),
                checks,
                additivity,
                pass,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(ValidationSummary {
        config_hash: run.loaded.hash.clone(),
        seed: cfg.seed,
        tolerance_se: v.se_tolerance,
        corrupt,
        pass: results.iter().all(|r| r.pass),
        results,
    })
}

pub fn render(s: &ValidationSummary) -> String {
    let mut out = String::new();
    for r in &s.results {
        let _ = writeln!(
            out,
            "{} {} / {} (n={}, {:.1}s)",
            if r.pass { "PASS" } else { "FAIL" },
            r.occupation,
            r.parameterization.label(),
            r.n,
            r.seconds
        );
        for c in &r.checks {
            let _ = writeln!(
                out,
                "  {:<4} oracle {:>9.4}  estimate {:>9.4}  se {:>7.4}  |z| {:>5.2}{}",
                c.effect.to_string(),
                c.oracle,
                c.estimate,
                c.std_error,
                c.z,
                if c.pass {
                    ""
                } else {
                    "  <-- outside tolerance"
                }
            );
        }
        if !r.additivity {
            let _ = writeln!(out, "  additivity identities violated");
        }
    }
    let _ = writeln!(
        out,
        "{}",
        if s.pass {
            "validation PASSED"
        } else {
            "validation FAILED"
        }
    );
    out
}

pub fn cmd_validate(run: &Run, corrupt: Option<Corruption>) -> Result<(bool, String)> {
    let summary = run_validation(run, corrupt)?;
    std::fs::create_dir_all(&run.cfg().out_dir)?;
    write_json(&run.path(VALIDATION_JSON), &summary)?;
    Ok((summary.pass, render(&summary)))
}
