use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{sample_truncated_normal, Covariates, PanelRow, PumsRow, MIN_AGE};
use crate::error::{Error, Result};
use crate::learners::{clip_probability, Design, Feature, LearnerFactory, Regressor};
use crate::sfm::grouping::{Gender, STATES};

/// Density-ratio weights are clipped into this range after normalization.
pub const WEIGHT_CLIP: (f64, f64) = (0.01, 100.0);

/// σ cells with fewer effective rows than this fall back to their parent.
pub const MIN_EFFECTIVE_ROWS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    A18to24,
    A25to34,
    A35to44,
}

impl AgeBand {
    pub fn of(age: u32) -> AgeBand {
        match age {
            0..=24 => AgeBand::A18to24,
            25..=34 => AgeBand::A25to34,
            _ => AgeBand::A35to44,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SigmaLevel {
    Cell,
    GenderJob,
    Job,
    Global,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    w: f64,
    w2: f64,
    wr: f64,
    wrr: f64,
}

impl Moments {
    fn add(&mut self, w: f64, r: f64) {
        self.w += w;
        self.w2 += w * w;
        self.wr += w * r;
        self.wrr += w * r * r;
    }

    fn effective_rows(&self) -> f64 {
        if self.w2 > 0.0 {
            self.w * self.w / self.w2
        } else {
            0.0
        }
    }

    fn sd(&self) -> f64 {
        let m = self.wr / self.w;
        (self.wrr / self.w - m * m).max(0.0).sqrt()
    }
}

fn job_levels<'a>(jobs: impl Iterator<Item = &'a str>) -> Vec<String> {
    jobs.map(str::to_string)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn state_index(state: &str) -> Result<f64> {
    let code = crate::sfm::grouping::usps_code(state)?;
    Ok(STATES
        .iter()
        .position(|s| s.0 == code)
        .expect("known state") as f64)
}

fn job_index(jobs: &[String], job: &str) -> Result<f64> {
    jobs.iter()
        .position(|j| j == job)
        .map(|i| i as f64)
        .ok_or_else(|| Error::Unknown {
            kind: "occupation",
            value: job.to_string(),
        })
}

fn covariate_design<C: Covariates>(
    rows: &[C],
    jobs: &[String],
    with_state: bool,
) -> Result<Design> {
    let mut features = vec![
        Feature::categorical(
            "gender",
            2,
            rows.iter().map(|r| f64::from(r.gender().code())).collect(),
        ),
        Feature::categorical(
            "race",
            4,
            rows.iter().map(|r| f64::from(r.race().code())).collect(),
        ),
        Feature::real("age", rows.iter().map(|r| f64::from(r.age())).collect()),
        Feature::ordinal(
            "edu_level",
            7,
            rows.iter()
                .map(|r| f64::from(r.edu_level().code()))
                .collect(),
        ),
        Feature::categorical(
            "job",
            jobs.len().max(1),
            rows.iter()
                .map(|r| job_index(jobs, r.occupation()))
                .collect::<Result<_>>()?,
        ),
    ];
    if with_state {
        features.push(Feature::categorical(
            "state",
            STATES.len(),
            rows.iter()
                .map(|r| state_index(r.state()))
                .collect::<Result<_>>()?,
        ));
    }
    Design::new(features)
}

/// Weights that reweight panel rows toward the survey covariate distribution.
pub fn density_ratio_weights(
    panel: &[PanelRow],
    pums: &[PumsRow],
    factory: &dyn LearnerFactory,
) -> Result<Vec<f64>> {
    if panel.is_empty() || pums.is_empty() {
        return Err(Error::invalid(
            "density-ratio weighting needs rows from both sources",
        ));
    }
    let jobs = job_levels(
        panel
            .iter()
            .map(|r| r.occupation.as_str())
            .chain(pums.iter().map(|r| r.occupation.as_str())),
    );
    let source = covariate_design(panel, &jobs, false)?;
    let target = covariate_design(pums, &jobs, false)?;
    let both = Design::new(
        source
            .features()
            .iter()
            .zip(target.features())
            .map(|(a, b)| Feature {
                spec: a.spec.clone(),
                values: a.values.iter().chain(&b.values).copied().collect(),
            })
            .collect(),
    )?;
    let labels: Vec<bool> = (0..panel.len() + pums.len())
        .map(|i| i >= panel.len())
        .collect();
    let clf = factory.classifier(&both, &labels, None)?;
    let prior = panel.len() as f64 / pums.len() as f64;
    let raw: Vec<f64> = clf
        .predict_proba(&source)?
        .into_iter()
        .map(|p| {
            let p = clip_probability(p);
            p / (1.0 - p) * prior
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw
        .into_iter()
        .map(|w| (w / mean).clamp(WEIGHT_CLIP.0, WEIGHT_CLIP.1))
        .collect())
}

/// Mean regressor plus hierarchical residual scale for years of experience.
#[derive(Debug)]
pub struct ExperienceModel {
    regressor: Box<dyn Regressor>,
    jobs: Vec<String>,
    cells: HashMap<(AgeBand, Gender, String), Moments>,
    gender_job: HashMap<(Gender, String), Moments>,
    job: HashMap<String, Moments>,
    global: Moments,
}

pub fn fit_experience_model(
    panel: &[PanelRow],
    weights: &[f64],
    factory: &dyn LearnerFactory,
) -> Result<ExperienceModel> {
    if panel.is_empty() {
        return Err(Error::invalid("empty panel"));
    }
    if weights.len() != panel.len() {
        return Err(Error::invalid("one weight per panel row is required"));
    }
    let jobs = job_levels(panel.iter().map(|r| r.occupation.as_str()));
    let design = covariate_design(panel, &jobs, true)?;
    let y: Vec<f64> = panel.iter().map(|r| r.exp_year).collect();
    let regressor = factory.regressor(&design, &y, Some(weights))?;
    let fitted = regressor.predict(&design)?;
    let mut model = ExperienceModel {
        regressor,
        jobs,
        cells: HashMap::new(),
        gender_job: HashMap::new(),
        job: HashMap::new(),
        global: Moments::default(),
    };
    for ((row, w), f) in panel.iter().zip(weights).zip(fitted) {
        let r = row.exp_year - f;
        let job = row.occupation.clone();
        model
            .cells
            .entry((AgeBand::of(row.age), row.gender, job.clone()))
            .or_default()
            .add(*w, r);
        model
            .gender_job
            .entry((row.gender, job.clone()))
            .or_default()
            .add(*w, r);
        model.job.entry(job).or_default().add(*w, r);
        model.global.add(*w, r);
    }
    Ok(model)
}

const SIGMA_FLOOR: f64 = 1e-6;

impl ExperienceModel {
    pub fn jobs(&self) -> &[String] {
        &self.jobs
    }

    /// Fitted mean for each row.
    pub fn mean<C: Covariates>(&self, rows: &[C]) -> Result<Vec<f64>> {
        self.regressor
            .predict(&covariate_design(rows, &self.jobs, true)?)
    }

    /// Residual scale for a cell and the level it was resolved at.
    pub fn sigma(&self, age: u32, gender: Gender, job: &str) -> (f64, SigmaLevel) {
        let usable = |m: Option<&Moments>| {
            m.filter(|m| m.effective_rows() >= MIN_EFFECTIVE_ROWS && m.sd() > 0.0)
                .map(Moments::sd)
        };
        let job = job.to_string();
        if let Some(s) = usable(self.cells.get(&(AgeBand::of(age), gender, job.clone()))) {
            return (s, SigmaLevel::Cell);
        }
        if let Some(s) = usable(self.gender_job.get(&(gender, job.clone()))) {
            return (s, SigmaLevel::GenderJob);
        }
        if let Some(s) = usable(self.job.get(&job)) {
            return (s, SigmaLevel::Job);
        }
        (self.global.sd().max(SIGMA_FLOOR), SigmaLevel::Global)
    }
}

/// One draw of years of experience for a profile-like record.
pub fn sample_experience<C: Covariates, R: Rng>(
    row: &C,
    model: &ExperienceModel,
    rng: &mut R,
) -> Result<f64> {
    if row.age() < MIN_AGE {
        return Err(Error::invalid(format!(
            "age {} is below {MIN_AGE}",
            row.age()
        )));
    }
    let mean = model.mean(std::slice::from_ref(row))?[0];
    let sigma = model.sigma(row.age(), row.gender(), row.occupation()).0;
    Ok(sample_truncated_normal(
        mean,
        sigma,
        0.0,
        f64::from(row.age() - MIN_AGE),
        rng,
    ))
}

/// Number of quantile levels emitted for large samples.
const QQ_LEVELS: usize = 99;

/// (standard-normal quantile, empirical quantile) pairs.
///
/// Small samples use every order statistic at plotting position `(i - 0.5) / n`;
/// larger ones use the percentiles 1..99.
pub fn qq_pairs(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.len() < 10 {
        return Err(Error::invalid(format!(
            "{} residuals; at least 10 are needed",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let norm = Normal::new(0.0, 1.0).expect("valid");
    if n <= QQ_LEVELS {
        return Ok(v
            .into_iter()
            .enumerate()
            .map(|(i, x)| (norm.inverse_cdf((i as f64 + 0.5) / n as f64), x))
            .collect());
    }
    Ok((1..=QQ_LEVELS)
        .map(|k| {
            let p = k as f64 / (QQ_LEVELS + 1) as f64;
            let h = (n - 1) as f64 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            let q = v[lo] + (h - lo as f64) * (v[hi] - v[lo]);
            (norm.inverse_cdf(p), q)
        })
        .collect())
}

/// Q-Q pairs of the panel's residuals standardized by the model's σ.
pub fn qq_residuals(panel: &[PanelRow], model: &ExperienceModel) -> Result<Vec<(f64, f64)>> {
    let means = model.mean(panel)?;
    let z: Vec<f64> = panel
        .iter()
        .zip(means)
        .map(|(r, m)| (r.exp_year - m) / model.sigma(r.age, r.gender, &r.occupation).0)
        .collect();
    qq_pairs(&z)
}
