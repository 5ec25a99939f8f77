use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use audit_core::audit::Contrast;
use audit_core::learners::LearnerGrid;
use audit_core::scorer::{EndpointConfig, SyntheticScorerParams};
use audit_core::sfm::grouping::GroupingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occupation {
    pub name: String,
    pub count: usize,
    /// Job description shown to a remote scorer; defaults to the occupation title.
    #[serde(default)]
    pub description: Option<String>,
}

impl Occupation {
    pub fn job_text(&self) -> String {
        self.description
            .clone()
            .unwrap_or_else(|| format!("Position: {}", self.name))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    pub pums: PathBuf,
    pub panel: PathBuf,
    pub first_names: PathBuf,
    pub surnames: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimation {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Minimum share of profiles with a valid score before estimation runs.
    #[serde(default = "default_completeness")]
    pub completeness: f64,
}

fn default_folds() -> usize {
    5
}
fn default_bootstrap() -> usize {
    500
}
fn default_level() -> f64 {
    0.95
}
fn default_completeness() -> f64 {
    0.95
}

impl Default for Estimation {
    fn default() -> Self {
        Estimation {
            folds: default_folds(),
            bootstrap: default_bootstrap(),
            level: default_level(),
            completeness: default_completeness(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    StructuralZero,
    XOnly,
    Generic,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::StructuralZero, Preset::XOnly, Preset::Generic];

    pub fn params(self, x_shift: f64) -> SyntheticScorerParams {
        match self {
            Preset::StructuralZero => SyntheticScorerParams::structural_zero(),
            Preset::XOnly => SyntheticScorerParams::x_only(x_shift),
            Preset::Generic => SyntheticScorerParams::generic(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Preset::StructuralZero => "structural-zero",
            Preset::XOnly => "x-only",
            Preset::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerConfig {
    Synthetic {
        #[serde(default)]
        preset: Option<Preset>,
        /// Explicit coefficients; used when no preset is named.
        #[serde(default)]
        params: Option<SyntheticScorerParams>,
        #[serde(default = "default_shift")]
        x_shift: f64,
    },
    Remote {
        #[serde(default)]
        endpoint: Option<EndpointConfig>,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

fn default_shift() -> f64 {
    5.0
}

impl ScorerConfig {
    pub fn synthetic_params(&self) -> Option<SyntheticScorerParams> {
        match self {
            ScorerConfig::Synthetic {
                preset,
                params,
                x_shift,
            } => Some(match (preset, params) {
                (Some(p), _) => p.params(*x_shift),
                (None, Some(p)) => p.clone(),
                (None, None) => SyntheticScorerParams::generic(),
            }),
            ScorerConfig::Remote { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    #[serde(default = "all_presets")]
    pub parameterizations: Vec<Preset>,
    #[serde(default = "default_shift")]
    pub x_shift: f64,
    /// Estimates must land within this many standard errors of the oracle.
    #[serde(default = "default_tolerance")]
    pub se_tolerance: f64,
}

fn all_presets() -> Vec<Preset> {
    Preset::ALL.to_vec()
}
fn default_tolerance() -> f64 {
    3.0
}

impl Default for Validation {
    fn default() -> Self {
        Validation {
            parameterizations: all_presets(),
            x_shift: default_shift(),
            se_tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub contrast: Contrast,
    pub occupations: Vec<Occupation>,
    pub sources: Sources,
    #[serde(default)]
    pub learners: LearnerGrid,
    #[serde(default)]
    pub estimation: Estimation,
    #[serde(default)]
    pub grouping: GroupingConfig,
    /// Content pools for rendering; the built-in pools when absent.
    #[serde(default)]
    pub pools: Option<PathBuf>,
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub validation: Validation,
}

/// A parsed configuration with the hash of its exact bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: AuditConfig,
    pub hash: String,
    pub path: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl LoadedConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
        let mut config: AuditConfig =
            toml::from_str(text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.out_dir);
        for p in [
            &mut config.sources.pums,
            &mut config.sources.panel,
            &mut config.sources.first_names,
            &mut config.sources.surnames,
        ] {
            resolve(base, p);
        }
        if let Some(p) = config.pools.as_mut() {
            resolve(base, p);
        }
        if let ScorerConfig::Remote { cache: Some(p), .. } = &mut config.scorer {
            resolve(base, p);
        }
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(o) = out {
            config.out_dir = o;
        }
        config.validate()?;
        Ok(LoadedConfig {
            config,
            hash: hex::encode(Sha256::digest(&bytes)),
            path: path.to_path_buf(),
        })
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.occupations.is_empty() {
            bail!("config lists no occupations");
        }
        for o in &self.occupations {
            if o.count == 0 {
                bail!("occupation {} has a sample count of 0", o.name);
            }
        }
        let mut names: Vec<&str> = self.occupations.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.occupations.len() {
            bail!("occupations are listed more than once");
        }
        for p in [
            &self.sources.pums,
            &self.sources.panel,
            &self.sources.first_names,
            &self.sources.surnames,
        ]
        .into_iter()
        .chain(self.pools.as_ref())
        {
            if !p.is_file() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        if self.estimation.folds < 2 {
            bail!("estimation.folds must be at least 2");
        }
        if self.estimation.bootstrap < 2 {
            bail!("estimation.bootstrap must be at least 2");
        }
        if !(self.estimation.level > 0.0 && self.estimation.level < 1.0) {
            bail!("estimation.level must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.estimation.completeness) {
            bail!("estimation.completeness must lie in [0, 1]");
        }
        self.learners.validate()?;
        self.grouping.validate()?;
        if let Some(p) = self.scorer.synthetic_params() {
            p.validate()?;
        }
        Ok(())
    }
}

/// Independent per-stage seed derived from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
