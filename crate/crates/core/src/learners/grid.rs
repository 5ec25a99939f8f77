use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{boost, BoostParams, Encoder, Ensemble, Objective, PatternSet};
use super::{check_lengths, Classifier, Design, FeatureSpec, LearnerFactory, Regressor};
use crate::error::{Error, Result};

/// Candidate hyperparameters for the boosted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub reg_lambda: Vec<f64>,
}

impl Default for LearnerGrid {
    fn default() -> Self {
        LearnerGrid {
            n_estimators: vec![5, 10, 20, 50, 100],
            max_depth: vec![1, 2, 3, 4, 5],
            reg_lambda: vec![0.5, 1.0, 2.0, 5.0],
        }
    }
}

impl LearnerGrid {
    pub fn single(n_estimators: usize, max_depth: usize, reg_lambda: f64) -> Self {
        LearnerGrid {
            n_estimators: vec![n_estimators],
            max_depth: vec![max_depth],
            reg_lambda: vec![reg_lambda],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty() || self.max_depth.is_empty() || self.reg_lambda.is_empty() {
            return Err(Error::invalid("learner grid has an empty axis"));
        }
        if self.n_estimators.contains(&0)
            || self.max_depth.contains(&0)
            || self.reg_lambda.iter().any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::invalid("learner grid values must be positive"));
        }
        Ok(())
    }

    /// All grid points in lexicographic `(n_estimators, max_depth, reg_lambda)` order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut n = self.n_estimators.clone();
        let mut d = self.max_depth.clone();
        let mut l = self.reg_lambda.clone();
        n.sort_unstable();
        n.dedup();
        d.sort_unstable();
        d.dedup();
        l.sort_by(f64::total_cmp);
        l.dedup();
        let mut out = Vec::with_capacity(n.len() * d.len() * l.len());
        for &n_estimators in &n {
            for &max_depth in &d {
                for &reg_lambda in &l {
                    out.push(GridPoint {
                        n_estimators,
                        max_depth,
                        reg_lambda,
                    });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub reg_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Brier,
    Mse,
}

impl Metric {
    fn objective(self) -> Objective {
        match self {
            Metric::Brier => Objective::Logistic,
            Metric::Mse => Objective::SquaredError,
        }
    }
}

/// Settings shared by every boosted fit that are not searched over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostSettings {
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for BoostSettings {
    fn default() -> Self {
        BoostSettings {
            learning_rate: 0.3,
            min_child_weight: 1.0,
            cv_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub point: GridPoint,
    /// Mean cross-validated metric, or the in-sample metric when nothing was searched.
    pub metric: f64,
    pub searched: bool,
}

fn params_for(point: &GridPoint, settings: &BoostSettings) -> BoostParams {
    BoostParams {
        max_depth: point.max_depth,
        reg_lambda: point.reg_lambda,
        learning_rate: settings.learning_rate,
        min_child_weight: settings.min_child_weight,
    }
}

/// Cross-validated search over `grid`; returns the point with the smallest mean metric.
///
/// Boosting has no subsampling, so the model with `n` trees is a prefix of the model
/// with `max(n)` trees. Each `(max_depth, reg_lambda, fold)` is boosted once and scored
/// at every `n_estimators` checkpoint.
pub fn grid_search(
    grid: &LearnerGrid,
    design: &Design,
    targets: &[f64],
    weights: Option<&[f64]>,
    metric: Metric,
    settings: &BoostSettings,
) -> Result<Selection> {
    grid.validate()?;
    check_lengths(design, targets.len(), weights)?;
    let folds = settings.cv_folds;
    if folds < 2 {
        return Err(Error::invalid("grid search needs at least 2 folds"));
    }
    let n = design.n_rows();
    if n < folds {
        return Err(Error::invalid(format!(
            "{n} rows is fewer than {folds} folds"
        )));
    }
    let points = grid.points();
    let encoded = Encoder::new(design.schema()).encode(design);
    if points.len() == 1 {
        let point = points[0];
        let ps = PatternSet::build(&encoded, n, targets, weights, None);
        let run = boost(
            metric.objective(),
            &params_for(&point, settings),
            &ps,
            Some(&ps),
            point.n_estimators,
            &[point.n_estimators],
            false,
        );
        return Ok(Selection {
            point,
            metric: run.checkpoint_loss[0],
            searched: false,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    let mut fold_of = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    let splits: Vec<(PatternSet, PatternSet)> = (0..folds)
        .map(|k| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let valid: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            (
                PatternSet::build(&encoded, n, targets, weights, Some(&train)),
                PatternSet::build(&encoded, n, targets, weights, Some(&valid)),
            )
        })
        .collect();

    let mut checkpoints: Vec<usize> = points.iter().map(|p| p.n_estimators).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let max_trees = *checkpoints.last().unwrap_or(&0);
    let mut shapes: Vec<(usize, f64)> =
        points.iter().map(|p| (p.max_depth, p.reg_lambda)).collect();
    shapes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    shapes.dedup();

    let tasks: Vec<(usize, usize)> = (0..shapes.len())
        .flat_map(|s| (0..folds).map(move |k| (s, k)))
        .collect();
    let losses: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(s, k)| {
            let (max_depth, reg_lambda) = shapes[s];
            let point = GridPoint {
                n_estimators: max_trees,
                max_depth,
                reg_lambda,
            };
            let (train, valid) = &splits[k];
            boost(
                metric.objective(),
                &params_for(&point, settings),
                train,
                Some(valid),
                max_trees,
                &checkpoints,
                false,
            )
            .checkpoint_loss
        })
        .collect();

    let mut best: Option<Selection> = None;
    for point in points {
        let s = shapes
            .iter()
            .position(|&(d, l)| d == point.max_depth && l == point.reg_lambda)
            .expect("shape present");
        let c = checkpoints
            .iter()
            .position(|&t| t == point.n_estimators)
            .expect("checkpoint present");
        let mean = (0..folds).map(|k| losses[s * folds + k][c]).sum::<f64>() / folds as f64;
        let better = match &best {
            None => true,
            Some(b) => mean < b.metric - 1e-12 * b.metric.abs().max(1.0),
        };
        if better {
            best = Some(Selection {
                point,
                metric: mean,
                searched: true,
            });
        }
    }
    best.ok_or_else(|| Error::invalid("empty grid"))
}

fn fit_ensemble(
    design: &Design,
    targets: &[f64],
    weights: Option<&[f64]>,
    objective: Objective,
    point: &GridPoint,
    settings: &BoostSettings,
) -> Ensemble {
    let encoder = Encoder::new(design.schema());
    let encoded = encoder.encode(design);
    let ps = PatternSet::build(&encoded, design.n_rows(), targets, weights, None);
    let run = boost(
        objective,
        &params_for(point, settings),
        &ps,
        None,
        point.n_estimators,
        &[],
        false,
    );
    Ensemble {
        encoder,
        objective,
        base_margin: run.base_margin,
        trees: run.trees,
    }
}

/// Boosted squared-error regressor with hyperparameters chosen by cross-validated MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub(crate) ensemble: Ensemble,
    pub selection: Selection,
}

/// Boosted logistic classifier with hyperparameters chosen by cross-validated Brier score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedClassifier {
    pub(crate) ensemble: Ensemble,
    pub selection: Selection,
}

impl FittedRegressor {
    pub fn schema(&self) -> &[FeatureSpec] {
        &self.ensemble.encoder.schema
    }

    pub fn n_trees(&self) -> usize {
        self.ensemble.trees.len()
    }

    /// Training MSE after 0, 1, ..., `n_trees` boosting rounds.
    pub fn mse_by_round(&self, design: &Design, targets: &[f64]) -> Result<Vec<f64>> {
        design.check_schema(self.schema())?;
        let mut partial = self.ensemble.clone();
        let trees = std::mem::take(&mut partial.trees);
        let mut out = Vec::with_capacity(trees.len() + 1);
        let mse = |p: &[f64]| {
            p.iter()
                .zip(targets)
                .map(|(p, y)| (p - y).powi(2))
                .sum::<f64>()
                / targets.len() as f64
        };
        out.push(mse(&partial.predict(design)));
        for t in trees {
            partial.trees.push(t);
            out.push(mse(&partial.predict(design)));
        }
        Ok(out)
    }
}

impl FittedClassifier {
    pub fn schema(&self) -> &[FeatureSpec] {
        &self.ensemble.encoder.schema
    }
}

impl Regressor for FittedRegressor {
    fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        design.check_schema(self.schema())?;
        Ok(self.ensemble.predict(design))
    }
}

impl Classifier for FittedClassifier {
    fn predict_proba(&self, design: &Design) -> Result<Vec<f64>> {
        design.check_schema(self.schema())?;
        Ok(self.ensemble.predict(design))
    }
}

pub fn fit_regressor(
    design: &Design,
    targets: &[f64],
    weights: Option<&[f64]>,
    grid: &LearnerGrid,
    settings: &BoostSettings,
) -> Result<FittedRegressor> {
    check_lengths(design, targets.len(), weights)?;
    if targets.len() < 10 {
        return Err(Error::invalid(format!(
            "regressor needs at least 10 rows, got {}",
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|y| !y.is_finite()) {
        return Err(Error::invalid(format!("non-finite target {bad}")));
    }
    let selection = grid_search(grid, design, targets, weights, Metric::Mse, settings)?;
    let ensemble = fit_ensemble(
        design,
        targets,
        weights,
        Objective::SquaredError,
        &selection.point,
        settings,
    );
    Ok(FittedRegressor {
        ensemble,
        selection,
    })
}

pub fn fit_classifier(
    design: &Design,
    labels: &[bool],
    weights: Option<&[f64]>,
    grid: &LearnerGrid,
    settings: &BoostSettings,
) -> Result<FittedClassifier> {
    check_lengths(design, labels.len(), weights)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid("classifier needs both classes present"));
    }
    let targets: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let selection = grid_search(grid, design, &targets, weights, Metric::Brier, settings)?;
    let ensemble = fit_ensemble(
        design,
        &targets,
        weights,
        Objective::Logistic,
        &selection.point,
        settings,
    );
    Ok(FittedClassifier {
        ensemble,
        selection,
    })
}

/// Learner factory backed by the boosted trees and a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedFactory {
    pub grid: LearnerGrid,
    pub settings: BoostSettings,
}

impl BoostedFactory {
    pub fn new(grid: LearnerGrid) -> Self {
        BoostedFactory {
            grid,
            settings: BoostSettings::default(),
        }
    }
}

impl LearnerFactory for BoostedFactory {
    fn regressor(
        &self,
        design: &Design,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Regressor>> {
        Ok(Box::new(fit_regressor(
            design,
            targets,
            weights,
            &self.grid,
            &self.settings,
        )?))
    }

    fn classifier(
        &self,
        design: &Design,
        labels: &[bool],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Classifier>> {
        Ok(Box::new(fit_classifier(
            design,
            labels,
            weights,
            &self.grid,
            &self.settings,
        )?))
    }

    fn describe(&self) -> String {
        format!(
            "boosted-trees grid={}x{}x{} lr={} cv_folds={}",
            self.grid.n_estimators.len(),
            self.grid.max_depth.len(),
            self.grid.reg_lambda.len(),
            self.settings.learning_rate,
            self.settings.cv_folds
        )
    }
}

/// Which nuisance kind a logged selection belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Regressor,
    Classifier,
}

/// Tally of fits that settled on one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCount {
    pub kind: FitKind,
    pub point: GridPoint,
    pub fits: usize,
}

/// A [`BoostedFactory`] that remembers every hyperparameter selection it makes.
#[derive(Debug)]
pub struct LoggingFactory {
    pub inner: BoostedFactory,
    log: std::sync::Mutex<Vec<(FitKind, GridPoint)>>,
}

impl LoggingFactory {
    pub fn new(inner: BoostedFactory) -> Self {
        LoggingFactory {
            inner,
            log: std::sync::Mutex::new(Vec::new()),
        }
    }

    /// Selections grouped by kind and grid point, in a fixed order.
    pub fn selections(&self) -> Vec<SelectionCount> {
        let log = self.log.lock().expect("selection log");
        let mut out: Vec<SelectionCount> = Vec::new();
        let mut sorted = log.clone();
        sorted.sort_by(|a, b| {
            (a.0, a.1.n_estimators, a.1.max_depth)
                .cmp(&(b.0, b.1.n_estimators, b.1.max_depth))
                .then(a.1.reg_lambda.total_cmp(&b.1.reg_lambda))
        });
        for (kind, point) in sorted {
            match out.last_mut() {
                Some(last) if last.kind == kind && last.point == point => last.fits += 1,
                _ => out.push(SelectionCount {
                    kind,
                    point,
                    fits: 1,
                }),
            }
        }
        out
    }

    fn record(&self, kind: FitKind, s: &Selection) {
        self.log
            .lock()
            .expect("selection log")
            .push((kind, s.point));
    }
}

impl LearnerFactory for LoggingFactory {
    fn regressor(
        &self,
        design: &Design,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Regressor>> {
        let m = fit_regressor(
            design,
            targets,
            weights,
            &self.inner.grid,
            &self.inner.settings,
        )?;
        self.record(FitKind::Regressor, &m.selection);
        Ok(Box::new(m))
    }

    fn classifier(
        &self,
        design: &Design,
        labels: &[bool],
        weights: Option<&[f64]>,
    ) -> Result<Box<dyn Classifier>> {
        let m = fit_classifier(
            design,
            labels,
            weights,
            &self.inner.grid,
            &self.inner.settings,
        )?;
        self.record(FitKind::Classifier, &m.selection);
        Ok(Box::new(m))
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Feature;
    use rand::Rng;

    fn line_design(n: usize) -> (Design, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        (Design::new(vec![Feature::real("x", x.clone())]).unwrap(), x)
    }

    #[test]
    fn default_grid_has_one_hundred_points() {
        let g = LearnerGrid::default();
        assert_eq!(g.len(), 100);
        assert_eq!(
            g.points()[0],
            GridPoint {
                n_estimators: 5,
                max_depth: 1,
                reg_lambda: 0.5
            }
        );
    }

    #[test]
    fn search_on_default_grid_returns_a_grid_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| (6.0 * v).sin() + 0.1 * rng.random::<f64>())
            .collect();
        let d = Design::new(vec![Feature::real("x", x)]).unwrap();
        let grid = LearnerGrid::default();
        let sel = grid_search(&grid, &d, &y, None, Metric::Mse, &BoostSettings::default()).unwrap();
        assert!(grid.points().contains(&sel.point));
        assert!(sel.searched);
    }

    #[test]
    fn single_point_grid_skips_search() {
        let (d, y) = line_design(50);
        let grid = LearnerGrid::single(10, 2, 1.0);
        let sel = grid_search(&grid, &d, &y, None, Metric::Mse, &BoostSettings::default()).unwrap();
        assert_eq!(sel.point, grid.points()[0]);
        assert!(!sel.searched);
    }

    #[test]
    fn equal_metrics_resolve_to_lexicographically_smallest_point() {
        // constant target: no split has positive gain, so every point fits perfectly
        let (d, _) = line_design(40);
        let y = vec![2.5; 40];
        let grid = LearnerGrid {
            n_estimators: vec![20, 5],
            max_depth: vec![3, 1],
            reg_lambda: vec![2.0, 0.5],
        };
        let sel = grid_search(&grid, &d, &y, None, Metric::Mse, &BoostSettings::default()).unwrap();
        assert_eq!(sel.metric, 0.0);
        assert_eq!(
            sel.point,
            GridPoint {
                n_estimators: 5,
                max_depth: 1,
                reg_lambda: 0.5
            }
        );
    }

    #[test]
    fn fewer_rows_than_folds_is_an_error() {
        let (d, y) = line_design(3);
        let grid = LearnerGrid::default();
        assert!(grid_search(&grid, &d, &y, None, Metric::Mse, &BoostSettings::default()).is_err());
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (d, _) = line_design(30);
        let y = vec![7.25; 30];
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(20, 3, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        assert!(m.predict(&d).unwrap().iter().all(|p| *p == 7.25));
    }

    #[test]
    fn identity_target_is_learned() {
        let (d, y) = line_design(1000);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(50, 3, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        let p = m.predict(&d).unwrap();
        let mse = p.iter().zip(&y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / y.len() as f64;
        assert!(mse < var / 10.0, "mse {mse} var {var}");
    }

    #[test]
    fn training_mse_never_increases_by_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v * v + 0.2 * rng.random::<f64>())
            .collect();
        let d = Design::new(vec![Feature::real("x", x)]).unwrap();
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(100, 2, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        let curve = m.mse_by_round(&d, &y).unwrap();
        assert_eq!(curve.len(), 101);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn single_row_regressor_is_an_error() {
        let (d, y) = line_design(1);
        assert!(fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::default(),
            &BoostSettings::default()
        )
        .is_err());
    }

    #[test]
    fn separable_classes_have_low_brier() {
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let labels: Vec<bool> = x.iter().map(|v| *v >= 100.0).collect();
        let d = Design::new(vec![Feature::real("x", x)]).unwrap();
        let m = fit_classifier(
            &d,
            &labels,
            None,
            &LearnerGrid::default(),
            &BoostSettings::default(),
        )
        .unwrap();
        let p = m.predict_proba(&d).unwrap();
        let brier = p
            .iter()
            .zip(&labels)
            .map(|(p, l)| (p - f64::from(u8::from(*l))).powi(2))
            .sum::<f64>()
            / p.len() as f64;
        assert!(brier < 0.05, "brier {brier}");
    }

    #[test]
    fn uninformative_features_give_near_half_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..4u8)))
            .collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let d = Design::new(vec![Feature::categorical("c", 4, x)]).unwrap();
        let m = fit_classifier(
            &d,
            &labels,
            None,
            &LearnerGrid::default(),
            &BoostSettings::default(),
        )
        .unwrap();
        let p = m.predict_proba(&d).unwrap();
        let mean_dev = p.iter().map(|p| (p - 0.5).abs()).sum::<f64>() / n as f64;
        assert!(mean_dev < 0.1, "{mean_dev}");
        for probs in m.class_probabilities(&d).unwrap() {
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let (d, _) = line_design(20);
        assert!(fit_classifier(
            &d,
            &[true; 20],
            None,
            &LearnerGrid::default(),
            &BoostSettings::default()
        )
        .is_err());
    }

    #[test]
    fn prediction_rejects_foreign_schema() {
        let (d, y) = line_design(20);
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(5, 1, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        let other = Design::new(vec![Feature::real("w", y)]).unwrap();
        assert!(m.predict(&other).is_err());
    }

    #[test]
    fn concurrent_predictions_match_serial() {
        let (d, y) = line_design(200);
        let m = fit_regressor(
            &d,
            &y,
            None,
            &LearnerGrid::single(20, 3, 1.0),
            &BoostSettings::default(),
        )
        .unwrap();
        let serial = m.predict(&d).unwrap();
        let parallel: Vec<Vec<f64>> = (0..8)
            .into_par_iter()
            .map(|_| m.predict(&d).unwrap())
            .collect();
        for p in parallel {
            assert_eq!(p, serial);
        }
    }
}
