use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::plugin::{at_arm, Designs};
use crate::estimands::{Arm, EstimandSpec, Quantity};
use crate::learners::{
    clip_probability, Classifier, ConstantClassifier, ConstantRegressor, Design, LearnerFactory,
    Regressor,
};
use crate::sfm::{Block, SfmTable};

/// Weights above this value are counted in the diagnostics.
pub const LARGE_WEIGHT: f64 = 1e4;

/// Outcome-side (μ) and propensity-side (π) learner factories.
#[derive(Clone, Copy)]
pub struct Learners<'a> {
    pub outcome: &'a dyn LearnerFactory,
    pub propensity: &'a dyn LearnerFactory,
}

impl<'a> Learners<'a> {
    pub fn same(factory: &'a dyn LearnerFactory) -> Self {
        Learners {
            outcome: factory,
            propensity: factory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Every outcome regression replaced by a constant.
    MuSide,
    /// Every propensity replaced by a constant.
    PiSide,
    Both,
}

const CORRUPT_MU: f64 = 0.0;
const CORRUPT_PI: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossfitOptions {
    pub folds: usize,
    pub seed: u64,
    pub corrupt: Option<Corruption>,
}

impl Default for CrossfitOptions {
    fn default() -> Self {
        CrossfitOptions {
            folds: 5,
            seed: 0,
            corrupt: None,
        }
    }
}

/// Per-row influence values for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityScores {
    pub quantity: Quantity,
    pub phi: Vec<f64>,
    pub fold: Vec<usize>,
    pub n_folds: usize,
    /// Rows where some weight exceeded [`LARGE_WEIGHT`].
    pub large_weights: usize,
}

impl QuantityScores {
    pub fn estimate(&self) -> f64 {
        self.phi.iter().sum::<f64>() / self.phi.len() as f64
    }

    pub fn std_error(&self) -> f64 {
        std_error(&self.phi)
    }

    pub fn fold_means(&self) -> Vec<f64> {
        let mut sums = vec![(0.0, 0usize); self.n_folds];
        for (p, &f) in self.phi.iter().zip(&self.fold) {
            sums[f].0 += p;
            sums[f].1 += 1;
        }
        sums.into_iter().map(|(s, c)| s / c as f64).collect()
    }
}

pub(crate) fn std_error(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Random balanced fold labels in `0..folds`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

#[derive(Default, Clone, Copy)]
struct Needs {
    total: bool,
    mu3: bool,
    e_brz: bool,
    nested: bool,
    q3: bool,
    q4: bool,
    q5: bool,
}

impl Needs {
    fn of(quantities: &[Quantity]) -> Self {
        let mut n = Needs::default();
        for q in quantities {
            match q {
                Quantity::Q1 | Quantity::Q2 => n.total = true,
                Quantity::Q3 => n.q3 = true,
                Quantity::Q4 => n.q4 = true,
                Quantity::Q5 => n.q5 = true,
            }
        }
        n.nested = n.q4 || n.q5;
        n.mu3 = n.q3 || n.nested;
        n.e_brz = n.q3 || n.q4;
        n
    }
}

struct AllDesigns {
    out: Designs,
    z: Design,
    rz: Design,
    brz: Design,
}

struct Fitter<'a> {
    learners: Learners<'a>,
    corrupt: Option<Corruption>,
}

impl Fitter<'_> {
    fn regressor(&self, stage: &str, d: &Design, y: &[f64]) -> Result<Box<dyn Regressor>> {
        if self.corrupt == Some(Corruption::MuSide) {
            return Ok(Box::new(ConstantRegressor(CORRUPT_MU)));
        }
        self.learners
            .outcome
            .regressor(d, y, None)
            .map_err(|e| e.in_stage(stage))
    }

    fn classifier(&self, stage: &str, d: &Design, x: &[bool]) -> Result<Box<dyn Classifier>> {
        if self.corrupt == Some(Corruption::PiSide) {
            return Ok(Box::new(ConstantClassifier(CORRUPT_PI)));
        }
        self.learners
            .propensity
            .classifier(d, x, None)
            .map_err(|e| e.in_stage(stage))
    }
}

fn predict(stage: &str, m: &dyn Regressor, d: &Design) -> Result<Vec<f64>> {
    m.predict(d).map_err(|e| e.in_stage(stage))
}

fn propensity(stage: &str, m: &dyn Classifier, d: &Design) -> Result<Vec<f64>> {
    Ok(m.predict_proba(d)
        .map_err(|e| e.in_stage(stage))?
        .into_iter()
        .map(clip_probability)
        .collect())
}

/// P(X = arm) from P(X = x1).
fn p_arm(p1: f64, arm: Arm) -> f64 {
    if arm.is_x1() {
        p1
    } else {
        1.0 - p1
    }
}

struct FoldScores {
    rows: Vec<usize>,
    /// Indexed like the requested quantity list.
    phi: Vec<Vec<f64>>,
    large: Vec<usize>,
}

fn fit_fold(
    table: &SfmTable,
    designs: &AllDesigns,
    quantities: &[Quantity],
    needs: Needs,
    fitter: &Fitter,
    fold: &[usize],
    ell: usize,
) -> Result<FoldScores> {
    let train: Vec<usize> = (0..fold.len()).filter(|&i| fold[i] != ell).collect();
    let test: Vec<usize> = (0..fold.len()).filter(|&i| fold[i] == ell).collect();
    let x_all = table.is_x1();
    let x_tr: Vec<bool> = train.iter().map(|&i| x_all[i]).collect();
    if !x_tr.iter().any(|&v| v) || x_tr.iter().all(|&v| v) {
        return Err(Error::EmptyArm(format!(
            "in the training rows for fold {ell}"
        )));
    }
    let y_tr: Vec<f64> = train.iter().map(|&i| table.outcome()[i]).collect();
    let y_te: Vec<f64> = test.iter().map(|&i| table.outcome()[i]).collect();
    let x_te: Vec<bool> = test.iter().map(|&i| x_all[i]).collect();

    let tr = |d: &Design| d.subset(&train);
    let te = |d: &Design| d.subset(&test);
    let (xz_tr, xz_te) = (tr(&designs.out.xz), te(&designs.out.xz));

    let e_z_model = fitter.classifier("P(X|Z)", &tr(&designs.z), &x_tr)?;
    let e_z = propensity("P(X|Z)", e_z_model.as_ref(), &te(&designs.z))?;

    let mut mu_xz = None;
    if needs.total {
        let m = fitter.regressor("mu(X,Z)", &xz_tr, &y_tr)?;
        mu_xz = Some([
            predict("mu(X,Z)", m.as_ref(), &at_arm(&xz_te, Arm::X0))?,
            predict("mu(X,Z)", m.as_ref(), &at_arm(&xz_te, Arm::X1))?,
        ]);
    }

    let e_rz = if needs.nested {
        let m = fitter.classifier("P(X|R,Z)", &tr(&designs.rz), &x_tr)?;
        Some(propensity("P(X|R,Z)", m.as_ref(), &te(&designs.rz))?)
    } else {
        None
    };
    let e_brz = if needs.e_brz {
        let m = fitter.classifier("P(X|B,R,Z)", &tr(&designs.brz), &x_tr)?;
        Some(propensity("P(X|B,R,Z)", m.as_ref(), &te(&designs.brz))?)
    } else {
        None
    };

    // Outcome regression and its arm-x1 evaluations on both splits.
    let (xrz_tr, xrz_te) = (tr(&designs.out.xrz), te(&designs.out.xrz));
    let mut m3 = None;
    if needs.mu3 {
        let (xbrz_tr, xbrz_te) = (tr(&designs.out.xbrz), te(&designs.out.xbrz));
        let mu3 = fitter.regressor("mu3", &xbrz_tr, &y_tr)?;
        let m3_tr = predict("mu3", mu3.as_ref(), &at_arm(&xbrz_tr, Arm::X1))?;
        let m3_te = predict("mu3", mu3.as_ref(), &at_arm(&xbrz_te, Arm::X1))?;
        m3 = Some((m3_tr, m3_te));
    }

    let mut mu2 = None;
    if needs.nested {
        let (m3_tr, _) = m3.as_ref().expect("mu3 fitted");
        let m = fitter.regressor("mu2", &xrz_tr, m3_tr)?;
        let tr_at = [
            predict("mu2", m.as_ref(), &at_arm(&xrz_tr, Arm::X0))?,
            predict("mu2", m.as_ref(), &at_arm(&xrz_tr, Arm::X1))?,
        ];
        let te_at = [
            predict("mu2", m.as_ref(), &at_arm(&xrz_te, Arm::X0))?,
            predict("mu2", m.as_ref(), &at_arm(&xrz_te, Arm::X1))?,
        ];
        mu2 = Some((tr_at, te_at));
    }

    let n_te = test.len();
    let mut out = FoldScores {
        rows: test.clone(),
        phi: Vec::with_capacity(quantities.len()),
        large: Vec::with_capacity(quantities.len()),
    };
    for &q in quantities {
        let spec = q.spec();
        let mut phi = vec![0.0; n_te];
        let mut large = 0;
        match q {
            Quantity::Q1 | Quantity::Q2 => {
                let a = spec.y_arm;
                let mu = &mu_xz.as_ref().expect("fitted")[a.index()];
                for i in 0..n_te {
                    let w = if x_te[i] == a.is_x1() {
                        1.0 / p_arm(e_z[i], a)
                    } else {
                        0.0
                    };
                    large += usize::from(w > LARGE_WEIGHT);
                    phi[i] = w * (y_te[i] - mu[i]) + mu[i];
                }
            }
            Quantity::Q3 => {
                let (m3_tr, m3_te) = m3.as_ref().expect("fitted");
                let e_brz = e_brz.as_ref().expect("fitted");
                let mw = fitter.regressor("muW", &xz_tr, m3_tr)?;
                let mw_x0 = predict("muW", mw.as_ref(), &at_arm(&xz_te, Arm::X0))?;
                for i in 0..n_te {
                    let (wy, ww) = if x_te[i] {
                        let wy = (1.0 - e_brz[i]) / (e_brz[i] * (1.0 - e_z[i]));
                        (wy, 0.0)
                    } else {
                        (0.0, 1.0 / (1.0 - e_z[i]))
                    };
                    large += usize::from(wy.max(ww) > LARGE_WEIGHT);
                    phi[i] = wy * (y_te[i] - m3_te[i]) + ww * (m3_te[i] - mw_x0[i]) + mw_x0[i];
                }
            }
            Quantity::Q4 | Quantity::Q5 => {
                let (_, m3_te) = m3.as_ref().expect("fitted");
                let (mu2_tr, mu2_te) = mu2.as_ref().expect("fitted");
                let e_rz = e_rz.as_ref().expect("fitted");
                let (ba, ra) = (spec.b_arm, spec.r_arm);
                let stage = if q == Quantity::Q4 {
                    "mu1(Q4)"
                } else {
                    "mu1(Q5)"
                };
                let mu1 = fitter.regressor(stage, &xz_tr, &mu2_tr[ba.index()])?;
                let mu1_ra = predict(stage, mu1.as_ref(), &at_arm(&xz_te, ra))?;
                for i in 0..n_te {
                    let ez = p_arm(e_z[i], ra);
                    let prr = p_arm(e_rz[i], ra);
                    let prb = p_arm(e_rz[i], ba);
                    let w3 = if x_te[i] {
                        let pb = match &e_brz {
                            Some(e) if ba != Arm::X1 => p_arm(e[i], ba) / e[i],
                            _ => 1.0,
                        };
                        prr * pb / (ez * prb)
                    } else {
                        0.0
                    };
                    let w2 = if x_te[i] == ba.is_x1() {
                        prr / (ez * prb)
                    } else {
                        0.0
                    };
                    let w1 = if x_te[i] == ra.is_x1() { 1.0 / ez } else { 0.0 };
                    large += usize::from(w3.max(w2).max(w1) > LARGE_WEIGHT);
                    // Each weight vanishes unless X equals its stage arm, so the
                    // observed-X regressions can be read at that arm.
                    let m2 = mu2_te[ba.index()][i];
                    phi[i] = w3 * (y_te[i] - m3_te[i])
                        + w2 * (m3_te[i] - m2)
                        + w1 * (m2 - mu1_ra[i])
                        + mu1_ra[i];
                }
            }
        }
        if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: q.to_string(),
                row: test[i],
            });
        }
        out.phi.push(phi);
        out.large.push(large);
    }
    Ok(out)
}

/// Cross-fitted influence values for several quantities over shared nuisances.
pub fn crossfit(
    table: &SfmTable,
    quantities: &[Quantity],
    learners: Learners,
    opts: &CrossfitOptions,
) -> Result<Vec<QuantityScores>> {
    let n = table.n_rows();
    if opts.folds < 2 {
        return Err(Error::invalid("cross-fitting needs at least 2 folds"));
    }
    if opts.folds > n {
        return Err(Error::invalid(format!("{} folds for {n} rows", opts.folds)));
    }
    if opts.corrupt == Some(Corruption::Both) {
        return Err(Error::invalid(
            "corrupting both nuisance groups is not allowed",
        ));
    }
    let fold = fold_assignment(n, opts.folds, opts.seed);
    let designs = AllDesigns {
        out: Designs::new(table),
        z: table.design(&[Block::Z]),
        rz: table.design(&[Block::R, Block::Z]),
        brz: table.design(&[Block::B, Block::R, Block::Z]),
    };
    let needs = Needs::of(quantities);
    let fitter = Fitter {
        learners,
        corrupt: opts.corrupt,
    };
    let per_fold = (0..opts.folds)
        .into_par_iter()
        .map(|ell| fit_fold(table, &designs, quantities, needs, &fitter, &fold, ell))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<QuantityScores> = quantities
        .iter()
        .map(|&q| QuantityScores {
            quantity: q,
            phi: vec![0.0; n],
            fold: fold.clone(),
            n_folds: opts.folds,
            large_weights: 0,
        })
        .collect();
    for fs in per_fold {
        for (k, scores) in out.iter_mut().enumerate() {
            for (j, &row) in fs.rows.iter().enumerate() {
                scores.phi[row] = fs.phi[k][j];
            }
            scores.large_weights += fs.large[k];
        }
    }
    Ok(out)
}

pub fn crossfit_quantity(
    table: &SfmTable,
    spec: &EstimandSpec,
    learners: Learners,
    opts: &CrossfitOptions,
) -> Result<QuantityScores> {
    let q = spec.quantity()?;
    Ok(crossfit(table, &[q], learners, opts)?.remove(0))
}

/// Doubly-robust estimate with one nuisance group replaced by a constant.
pub fn corruption_probe(
    table: &SfmTable,
    spec: &EstimandSpec,
    learners: Learners,
    corrupt: Corruption,
    opts: &CrossfitOptions,
) -> Result<f64> {
    let opts = CrossfitOptions {
        corrupt: Some(corrupt),
        ..*opts
    };
    Ok(crossfit_quantity(table, spec, learners, &opts)?.estimate())
}
