//! Versioned on-disk form of fitted boosted models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FittedClassifier, FittedRegressor};
use crate::error::{Error, Result};

/// Bumped whenever the serialized layout changes incompatibly.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    Regressor(FittedRegressor),
    Classifier(FittedClassifier),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model: ModelArtifact,
}

pub fn save_model(path: &Path, model: &ModelArtifact) -> Result<()> {
    let env = Envelope {
        format_version: ARTIFACT_VERSION,
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let env: Envelope = serde_json::from_slice(&std::fs::read(path)?)?;
    if env.format_version != ARTIFACT_VERSION {
        return Err(Error::Schema(format!(
            "model artifact version {} (expected {ARTIFACT_VERSION})",
            env.format_version
        )));
    }
    Ok(env.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_regressor, BoostSettings, Design, Feature, LearnerGrid, Regressor};

    #[test]
    fn saved_model_predicts_identically_after_reload() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        let d = Design::new(vec![Feature::real("x", x)]).unwrap();
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(10, 2, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &ModelArtifact::Regressor(m.clone())).unwrap();
        let ModelArtifact::Regressor(back) = load_model(&path).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(back.predict(&d).unwrap(), m.predict(&d).unwrap());
    }
}
