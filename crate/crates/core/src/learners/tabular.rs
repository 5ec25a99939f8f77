use std::collections::HashMap;

use super::{
    check_lengths, Classifier, Design, FeatureKind, FeatureSpec, LearnerFactory, Regressor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularTarget {
    /// Conditional mean of a real target.
    Mean,
    /// Conditional frequency of a binary label.
    Frequency,
}

/// Empirical conditional mean per observed feature combination.
///
/// Unseen combinations fall back to the global (weighted) mean.
#[derive(Debug, Clone)]
pub struct TabularModel {
    schema: Vec<FeatureSpec>,
    cells: HashMap<Vec<u32>, f64>,
    global: f64,
    target: TabularTarget,
}

fn row_key(design: &Design, row: usize) -> Vec<u32> {
    design
        .features()
        .iter()
        .map(|f| f.values[row] as u32)
        .collect()
}

pub fn tabular_exact_learner(
    design: &Design,
    targets: &[f64],
    weights: Option<&[f64]>,
    target: TabularTarget,
) -> Result<TabularModel> {
    check_lengths(design, targets.len(), weights)?;
    if targets.is_empty() {
        return Err(Error::invalid("tabular learner needs at least one row"));
    }
    if let Some(f) = design
        .features()
        .iter()
        .find(|f| matches!(f.spec.kind, FeatureKind::Real))
    {
        return Err(Error::invalid(format!(
            "tabular learner requires categorical features, {} is real-valued",
            f.spec.name
        )));
    }
    let mut sums: HashMap<Vec<u32>, (f64, f64)> = HashMap::new();
    let (mut total, mut total_w) = (0.0, 0.0);
    for (i, &y) in targets.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let e = sums.entry(row_key(design, i)).or_insert((0.0, 0.0));
        e.0 += w * y;
        e.1 += w;
        total += w * y;
        total_w += w;
    }
    let cells = sums
        .into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(k, (s, w))| (k, s / w))
        .collect();
    Ok(TabularModel {
        schema: design.schema(),
        cells,
        global: total / total_w,
        target,
    })
}

impl TabularModel {
    pub fn target(&self) -> TabularTarget {
        self.target
    }

    pub fn global_mean(&self) -> f64 {
        self.global
    }

    fn lookup(&self, design: &Design) -> Result<Vec<f64>> {
        design.check_schema(&self.schema)?;
        Ok((0..design.n_rows())
            .map(|i| *self.cells.get(&row_key(design, i)).unwrap_or(&self.global))
            .collect())
    }
}

impl Regressor for TabularModel {
    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        self.lookup(design)
    }
}

impl Classifier for TabularModel {
    fn predict_proba(&self, design: &Design) -> Result<Vec<f64>> {
        self.lookup(design)
    }
}

/// Factory producing exact empirical nuisances; used as an oracle in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct TabularFactory;

impl LearnerFactory for TabularFactory {
    fn regressor(
        &self,
        design: &Design,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Regressor>> {
        Ok(Box::new(tabular_exact_learner(
            design,
            targets,
            weights,
            TabularTarget::Mean,
        )?))
    }

    fn classifier(
        &self,
        design: &Design,
        labels: &[bool],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Classifier>> {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
        Ok(Box::new(tabular_exact_learner(
            design,
            &y,
            weights,
            TabularTarget::Frequency,
        )?))
    }

    fn describe(&self) -> String {
        "tabular-exact".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Feature;

    #[test]
    fn conditional_mean_per_cell() {
        let d = Design::new(vec![Feature::categorical("x", 2, vec![0.0, 0.0, 1.0])]).unwrap();
        let m = tabular_exact_learner(&d, &[1.0, 3.0, 10.0], None, TabularTarget::Mean).unwrap();
        let q = Design::new(vec![Feature::categorical("x", 2, vec![0.0, 1.0])]).unwrap();
        assert_eq!(m.predict(&q).unwrap(), vec![2.0, 10.0]);
    }

    #[test]
    fn contingency_frequencies_match_hand_counts() {
        // z=0: x = [1,0,0,1] -> 2/4; z=1: x = [1,1,1,0,0,1] -> 4/6
        let z = vec![0., 0., 0., 0., 1., 1., 1., 1., 1., 1.];
        let x = [
            true, false, false, true, true, true, true, false, false, true,
        ];
        let d = Design::new(vec![Feature::categorical("z", 2, z)]).unwrap();
        let m = TabularFactory.classifier(&d, &x, None).unwrap();
        let q = Design::new(vec![Feature::categorical("z", 2, vec![0.0, 1.0])]).unwrap();
        let p = m.predict_proba(&q).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_level_falls_back_to_global_frequency() {
        let d = Design::new(vec![Feature::categorical("z", 3, vec![0.0, 0.0, 1.0, 1.0])]).unwrap();
        let m = TabularFactory
            .classifier(&d, &[true, true, true, false], None)
            .unwrap();
        let q = Design::new(vec![Feature::categorical("z", 3, vec![2.0])]).unwrap();
        assert_eq!(m.predict_proba(&q).unwrap(), vec![0.75]);
    }

    #[test]
    fn real_features_are_rejected() {
        let d = Design::new(vec![Feature::real("r", vec![0.5, 1.5])]).unwrap();
        assert!(tabular_exact_learner(&d, &[1.0, 2.0], None, TabularTarget::Mean).is_err());
    }
}
