//! Supervised learners used as nuisance estimators.
//!
//! Every learner consumes a [`Design`]: a column-oriented feature table whose
//! schema (names and kinds) is frozen at fit time. Fitted models are immutable
//! and `Send + Sync`, so a single fitted model can serve concurrent predictions.

mod artifact;
mod gbdt;
mod grid;
mod tabular;

pub use artifact::{load_model, save_model, ModelArtifact, ARTIFACT_VERSION};
pub use gbdt::{BoostParams, Objective};
pub use grid::{
    fit_classifier, fit_regressor, grid_search, BoostSettings, BoostedFactory, FitKind,
    FittedClassifier, FittedRegressor, GridPoint, LearnerGrid, LoggingFactory, Metric, Selection,
    SelectionCount,
};
pub use tabular::{tabular_exact_learner, TabularFactory, TabularModel, TabularTarget};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clip applied to estimated probabilities before they enter a ratio.
pub const PROB_CLIP: f64 = 1e-6;

/// Clamp a probability into `[PROB_CLIP, 1 - PROB_CLIP]`.
pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Unordered category coded `0..levels`.
    Categorical {
        levels: usize,
    },
    /// Ordered category coded `0..levels`; trees see both one-hot and integer codes.
    Ordinal {
        levels: usize,
    },
    Real,
}

impl FeatureKind {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, FeatureKind::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub spec: FeatureSpec,
    pub values: Vec<f64>,
}

impl Feature {
    pub fn categorical(name: &str, levels: usize, codes: Vec<f64>) -> Self {
        Feature {
            spec: FeatureSpec {
                name: name.to_string(),
                kind: FeatureKind::Categorical { levels },
            },
            values: codes,
        }
    }

    pub fn ordinal(name: &str, levels: usize, codes: Vec<f64>) -> Self {
        Feature {
            spec: FeatureSpec {
                name: name.to_string(),
                kind: FeatureKind::Ordinal { levels },
            },
            values: codes,
        }
    }

    pub fn real(name: &str, values: Vec<f64>) -> Self {
        Feature {
            spec: FeatureSpec {
                name: name.to_string(),
                kind: FeatureKind::Real,
            },
            values,
        }
    }
}

/// Column-oriented design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    features: Vec<Feature>,
    n_rows: usize,
}

impl Design {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let n_rows = features.first().map_or(0, |f| f.values.len());
        for f in &features {
            if f.values.len() != n_rows {
                return Err(Error::Schema(format!(
                    "feature {} has {} rows, expected {}",
                    f.spec.name,
                    f.values.len(),
                    n_rows
                )));
            }
            if let FeatureKind::Categorical { levels } | FeatureKind::Ordinal { levels } =
                f.spec.kind
            {
                if let Some(bad) = f
                    .values
                    .iter()
                    .find(|v| v.fract() != 0.0 || **v < 0.0 || **v >= levels as f64)
                {
                    return Err(Error::Schema(format!(
                        "feature {} has code {bad} outside 0..{levels}",
                        f.spec.name
                    )));
                }
            } else if let Some(bad) = f.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "feature {} has non-finite value {bad}",
                    f.spec.name
                )));
            }
        }
        Ok(Design { features, n_rows })
    }

    /// A design with no features, only a row count (intercept-only models).
    pub fn empty(n_rows: usize) -> Self {
        Design {
            features: Vec::new(),
            n_rows,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn schema(&self) -> Vec<FeatureSpec> {
        self.features.iter().map(|f| f.spec.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.spec.name == name)
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[feature].values[row]
    }

    pub fn subset(&self, rows: &[usize]) -> Design {
        Design {
            features: self
                .features
                .iter()
                .map(|f| Feature {
                    spec: f.spec.clone(),
                    values: rows.iter().map(|&i| f.values[i]).collect(),
                })
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// Copy of the design with one feature overwritten by a constant.
    pub fn with_constant(&self, feature: usize, value: f64) -> Design {
        let mut out = self.clone();
        out.features[feature]
            .values
            .iter_mut()
            .for_each(|v| *v = value);
        out
    }

    pub(crate) fn check_schema(&self, expected: &[FeatureSpec]) -> Result<()> {
        let actual = self.schema();
        if actual.as_slice() != expected {
            return Err(Error::Schema(format!(
                "prediction schema {:?} does not match training schema {:?}",
                actual.iter().map(|s| &s.name).collect::<Vec<_>>(),
                expected.iter().map(|s| &s.name).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

pub trait Regressor: Send + Sync + std::fmt::Debug {
    fn predict(&self, design: &Design) -> Result<Vec<f64>>;
}

pub trait Classifier: Send + Sync + std::fmt::Debug {
    /// Probability of the positive label for each row.
    fn predict_proba(&self, design: &Design) -> Result<Vec<f64>>;

    /// Per-row `[P(label = 0), P(label = 1)]`.
    fn class_probabilities(&self, design: &Design) -> Result<Vec<[f64; 2]>> {
        Ok(self
            .predict_proba(design)?
            .into_iter()
            .map(|p| [1.0 - p, p])
            .collect())
    }
}

/// Produces fitted nuisance models on demand.
pub trait LearnerFactory: Send + Sync {
    fn regressor(
        &self,
        design: &Design,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Regressor>>;

    fn classifier(
        &self,
        design: &Design,
        labels: &[bool],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Classifier>>;

    /// Short description recorded in report provenance.
    fn describe(&self) -> String;
}

/// A regressor that predicts the same value everywhere.
#[derive(Debug, Clone)]
pub struct ConstantRegressor(pub f64);

impl Regressor for ConstantRegressor {
    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        Ok(vec![self.0; design.n_rows()])
    }
}

/// A classifier that returns the same probability everywhere.
#[derive(Debug, Clone)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn predict_proba(&self, design: &Design) -> Result<Vec<f64>> {
        Ok(vec![self.0; design.n_rows()])
    }
}

pub(crate) fn check_lengths(design: &Design, n: usize, weights: Option<&[f64]>) -> Result<()> {
    if design.n_rows() != n {
        return Err(Error::Schema(format!(
            "design has {} rows but {} targets",
            design.n_rows(),
            n
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Schema(format!("{} weights for {} rows", w.len(), n)));
        }
        if w.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
    }
    Ok(())
}
