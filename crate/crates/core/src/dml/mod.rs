//! Cross-fitted doubly-robust estimation and bootstrap intervals.

mod crossfit;

pub use crossfit::{
    corruption_probe, crossfit, crossfit_quantity, fold_assignment, Corruption, CrossfitOptions,
    Learners, QuantityScores, LARGE_WEIGHT,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{effects_from_quantities, EffectSet, Effects, Quantity};
use crate::learners::PROB_CLIP;
use crate::sfm::SfmTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            draws: 500,
            level: 0.95,
            seed: 0,
        }
    }
}

fn check_scores(scores: &[QuantityScores]) -> Result<usize> {
    if scores.len() != 5
        || scores
            .iter()
            .zip(Quantity::ALL)
            .any(|(s, q)| s.quantity != q)
    {
        return Err(Error::invalid("expected scores for Q1..Q5 in order"));
    }
    let n = scores[0].phi.len();
    if n == 0 || scores.iter().any(|s| s.phi.len() != n) {
        return Err(Error::invalid(
            "score vectors must be non-empty and of equal length",
        ));
    }
    Ok(n)
}

/// Effect sets recomputed on joint row resamples of the five score vectors.
///
/// Draw `b` uses its own ChaCha stream, so results do not depend on scheduling.
pub fn bootstrap_draws(
    scores: &[QuantityScores],
    opts: &BootstrapOptions,
) -> Result<Vec<EffectSet>> {
    let n = check_scores(scores)?;
    if opts.draws < 2 {
        return Err(Error::invalid("at least 2 bootstrap draws are required"));
    }
    (0..opts.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let mut sums = [0.0; 5];
            for _ in 0..n {
                let i = rng.random_range(0..n);
                for (s, sc) in sums.iter_mut().zip(scores) {
                    *s += sc.phi[i];
                }
            }
            effects_from_quantities(sums.map(|s| s / n as f64))
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityEstimate {
    pub quantity: Quantity,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    /// Influence-value standard error.
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n: usize,
    pub folds: usize,
    pub bootstrap_draws: usize,
    pub level: f64,
    pub crossfit_seed: u64,
    pub bootstrap_seed: u64,
    /// How the bootstrap resamples.
    pub resampling: String,
    pub prob_clip: f64,
    pub large_weight_threshold: f64,
    pub outcome_learner: String,
    pub propensity_learner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Rows with a weight above the threshold, per quantity.
    pub large_weights: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub quantities: Vec<QuantityEstimate>,
    pub effects: Effects<EffectEstimate>,
    pub meta: ReportMeta,
    pub diagnostics: Diagnostics,
}

impl EffectReport {
    pub fn point_estimates(&self) -> EffectSet {
        self.effects.map(|_, e| e.estimate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Point estimates, standard errors, and percentile intervals from five score vectors.
pub fn bootstrap_effects(
    scores: &[QuantityScores],
    opts: &BootstrapOptions,
    meta: ReportMeta,
) -> Result<EffectReport> {
    let n = check_scores(scores)?;
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let draws = bootstrap_draws(scores, opts)?;
    let q: [f64; 5] = std::array::from_fn(|k| scores[k].estimate());
    let point = effects_from_quantities(q)?;
    let alpha = (1.0 - opts.level) / 2.0;
    let effects = point.map(|eff, &estimate| {
        let w = eff.weights();
        let combo: Vec<f64> = (0..n)
            .map(|i| (0..5).map(|k| w[k] * scores[k].phi[i]).sum())
            .collect();
        let mut d: Vec<f64> = draws.iter().map(|s| *s.get(eff)).collect();
        d.sort_by(f64::total_cmp);
        let (ci_lo, ci_hi) = (quantile(&d, alpha), quantile(&d, 1.0 - alpha));
        EffectEstimate {
            estimate,
            std_error: crossfit::std_error(&combo),
            ci_lo,
            ci_hi,
            significant: !(ci_lo <= 0.0 && 0.0 <= ci_hi),
        }
    });
    Ok(EffectReport {
        quantities: scores
            .iter()
            .map(|s| QuantityEstimate {
                quantity: s.quantity,
                estimate: s.estimate(),
                std_error: s.std_error(),
            })
            .collect(),
        effects,
        meta,
        diagnostics: Diagnostics {
            large_weights: std::array::from_fn(|k| scores[k].large_weights),
        },
    })
}

/// Cross-fit all five quantities and bootstrap their effects.
pub fn estimate_effects(
    table: &SfmTable,
    learners: Learners,
    crossfit_opts: &CrossfitOptions,
    boot: &BootstrapOptions,
) -> Result<EffectReport> {
    let scores = crossfit(table, &Quantity::ALL, learners, crossfit_opts)?;
    let meta = ReportMeta {
        n: table.n_rows(),
        folds: crossfit_opts.folds,
        bootstrap_draws: boot.draws,
        level: boot.level,
        crossfit_seed: crossfit_opts.seed,
        bootstrap_seed: boot.seed,
        resampling: "rows of cross-fitted influence values; nuisances are not refit".into(),
        prob_clip: PROB_CLIP,
        large_weight_threshold: LARGE_WEIGHT,
        outcome_learner: learners.outcome.describe(),
        propensity_learner: learners.propensity.describe(),
    };
    bootstrap_effects(&scores, boot, meta)
}
