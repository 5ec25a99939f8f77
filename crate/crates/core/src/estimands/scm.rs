use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Arm, EstimandSpec};
use crate::error::{Error, Result};
use crate::sfm::{Block, Column, ColumnData, Role, SfmTable};

const NORMALIZE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeNoise {
    /// Y ~ Bernoulli(mean); means must lie in [0, 1].
    Bernoulli,
    Gaussian {
        sd: f64,
    },
}

/// Fully discrete structural model over X, Z, R, B, Y.
///
/// Tables are indexed `[x][z][r][b]` (X outermost); `x = 1` is the `x1` arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    pub x_levels: [String; 2],
    pub z_levels: Vec<String>,
    pub r_levels: Vec<String>,
    pub b_levels: Vec<String>,
    pub p_z: Vec<f64>,
    pub p_x1_given_z: Vec<f64>,
    pub p_r_given_xz: Vec<Vec<Vec<f64>>>,
    pub p_b_given_xzr: Vec<Vec<Vec<Vec<f64>>>>,
    pub y_mean: Vec<Vec<Vec<Vec<f64>>>>,
    pub outcome: OutcomeNoise,
}

fn check_dist(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORMALIZE_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

impl DiscreteScm {
    pub fn nz(&self) -> usize {
        self.z_levels.len()
    }

    pub fn nr(&self) -> usize {
        self.r_levels.len()
    }

    pub fn nb(&self) -> usize {
        self.b_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nz, nr, nb) = (self.nz(), self.nr(), self.nb());
        if nz == 0 || nr == 0 || nb == 0 {
            return Err(Error::invalid("every support must be non-empty"));
        }
        if self.x_levels[0] == self.x_levels[1] {
            return Err(Error::invalid("contrast levels must differ"));
        }
        let shape_err = |what: &str| Error::invalid(format!("{what} has the wrong shape"));
        check_dist(&self.p_z, "P(Z)")?;
        if self.p_z.len() != nz || self.p_x1_given_z.len() != nz {
            return Err(shape_err("P(Z) or P(X|Z)"));
        }
        if self.p_x1_given_z.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("P(X|Z) outside [0, 1]"));
        }
        if self.p_r_given_xz.len() != 2 || self.p_b_given_xzr.len() != 2 || self.y_mean.len() != 2 {
            return Err(shape_err("X dimension"));
        }
        for x in 0..2 {
            if self.p_r_given_xz[x].len() != nz
                || self.p_b_given_xzr[x].len() != nz
                || self.y_mean[x].len() != nz
            {
                return Err(shape_err("Z dimension"));
            }
            for z in 0..nz {
                let pr = &self.p_r_given_xz[x][z];
                if pr.len() != nr {
                    return Err(shape_err("P(R|X,Z)"));
                }
                check_dist(pr, &format!("P(R|x={x},z={z})"))?;
                if self.p_b_given_xzr[x][z].len() != nr || self.y_mean[x][z].len() != nr {
                    return Err(shape_err("R dimension"));
                }
                for r in 0..nr {
                    let pb = &self.p_b_given_xzr[x][z][r];
                    if pb.len() != nb || self.y_mean[x][z][r].len() != nb {
                        return Err(shape_err("B dimension"));
                    }
                    check_dist(pb, &format!("P(B|x={x},z={z},r={r})"))?;
                    for &m in &self.y_mean[x][z][r] {
                        let ok = match self.outcome {
                            OutcomeNoise::Bernoulli => (0.0..=1.0).contains(&m),
                            OutcomeNoise::Gaussian { .. } => m.is_finite(),
                        };
                        if !ok {
                            return Err(Error::invalid(format!("outcome mean {m} invalid")));
                        }
                    }
                }
            }
        }
        if let OutcomeNoise::Gaussian { sd } = self.outcome {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::invalid("outcome sd must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Random model with all probabilities bounded away from zero and a Bernoulli outcome.
    pub fn random<R: Rng>(nz: usize, nr: usize, nb: usize, rng: &mut R) -> Self {
        let dist = |n: usize, rng: &mut R| {
            normalized((0..n).map(|_| rng.random_range(0.2..1.0)).collect())
        };
        let p_z = dist(nz, rng);
        let p_x1_given_z = (0..nz).map(|_| rng.random_range(0.25..0.75)).collect();
        let p_r_given_xz = (0..2)
            .map(|_| (0..nz).map(|_| dist(nr, rng)).collect())
            .collect();
        let p_b_given_xzr = (0..2)
            .map(|_| {
                (0..nz)
                    .map(|_| (0..nr).map(|_| dist(nb, rng)).collect())
                    .collect()
            })
            .collect();
        let y_mean = (0..2)
            .map(|_| {
                (0..nz)
                    .map(|_| {
                        (0..nr)
                            .map(|_| (0..nb).map(|_| rng.random_range(0.05..0.95)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        DiscreteScm {
            x_levels: ["x0".into(), "x1".into()],
            z_levels: labels("z", nz),
            r_levels: labels("r", nr),
            b_levels: labels("b", nb),
            p_z,
            p_x1_given_z,
            p_r_given_xz,
            p_b_given_xzr,
            y_mean,
            outcome: OutcomeNoise::Bernoulli,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scm: DiscreteScm = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        scm.validate()?;
        Ok(scm)
    }

    /// Exact value of a quantity by enumeration of the identification formula.
    pub fn oracle_exact(&self, spec: &EstimandSpec) -> Result<f64> {
        spec.quantity()?;
        let (ya, ba, ra) = (spec.y_arm.index(), spec.b_arm.index(), spec.r_arm.index());
        let mut total = 0.0;
        for z in 0..self.nz() {
            let mut inner = 0.0;
            for r in 0..self.nr() {
                let pr = self.p_r_given_xz[ra][z][r];
                if pr == 0.0 {
                    continue;
                }
                let mut ey = 0.0;
                for b in 0..self.nb() {
                    ey += self.p_b_given_xzr[ba][z][r][b] * self.y_mean[ya][z][r][b];
                }
                inner += pr * ey;
            }
            total += self.p_z[z] * inner;
        }
        Ok(total)
    }

    pub fn oracle_quantities(&self) -> [f64; 5] {
        super::Quantity::ALL.map(|q| self.oracle_exact(&q.spec()).expect("supported"))
    }

    /// Joint probability of one full configuration.
    pub fn joint(&self, x: usize, z: usize, r: usize, b: usize) -> f64 {
        let px = if x == 1 {
            self.p_x1_given_z[z]
        } else {
            1.0 - self.p_x1_given_z[z]
        };
        self.p_z[z] * px * self.p_r_given_xz[x][z][r] * self.p_b_given_xzr[x][z][r][b]
    }

    /// Draw `n` rows as a table with single categorical columns `z`, `r`, `b` and outcome `y`.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<SfmTable> {
        let mut xs = Vec::with_capacity(n);
        let (mut zs, mut rs, mut bs, mut ys) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for _ in 0..n {
            let z = draw(&self.p_z, rng.random());
            let x = usize::from(rng.random::<f64>() < self.p_x1_given_z[z]);
            let r = draw(&self.p_r_given_xz[x][z], rng.random());
            let b = draw(&self.p_b_given_xzr[x][z][r], rng.random());
            let m = self.y_mean[x][z][r][b];
            let y = match self.outcome {
                OutcomeNoise::Bernoulli => f64::from(u8::from(rng.random::<f64>() < m)),
                OutcomeNoise::Gaussian { sd } => {
                    let e: f64 = rng.sample(rand_distr::StandardNormal);
                    m + sd * e
                }
            };
            xs.push(x == 1);
            zs.push(z as u32);
            rs.push(r as u32);
            bs.push(b as u32);
            ys.push(y);
        }
        SfmTable::new(
            "x",
            (&self.x_levels[0], &self.x_levels[1]),
            xs,
            vec![Column::categorical(
                "z",
                Role::Confounder,
                self.z_levels.clone(),
                zs,
            )],
            vec![Column::categorical(
                "b",
                Role::BusinessMediator,
                self.b_levels.clone(),
                bs,
            )],
            vec![Column::categorical(
                "r",
                Role::RedliningMediator,
                self.r_levels.clone(),
                rs,
            )],
            "y",
            ys,
        )
    }

    /// Empirical model of a fully categorical table.
    ///
    /// Multi-column blocks become joint levels. Conditionals on unobserved parent
    /// cells are uniform and unobserved outcome cells take the overall outcome mean.
    pub fn empirical(table: &SfmTable) -> Result<DiscreteScm> {
        let n = table.n_rows();
        let (zl, zc) = joint_codes(table, Block::Z)?;
        let (rl, rc) = joint_codes(table, Block::R)?;
        let (bl, bc) = joint_codes(table, Block::B)?;
        let (nz, nr, nb) = (zl.len(), rl.len(), bl.len());
        let mut cnt = vec![vec![vec![vec![0.0f64; nb]; nr]; nz]; 2];
        let mut ysum = cnt.clone();
        for i in 0..n {
            let x = usize::from(table.is_x1()[i]);
            cnt[x][zc[i]][rc[i]][bc[i]] += 1.0;
            ysum[x][zc[i]][rc[i]][bc[i]] += table.outcome()[i];
        }
        let ybar = table.outcome().iter().sum::<f64>() / n as f64;
        let nf = n as f64;
        let mut p_z = vec![0.0; nz];
        let mut p_x1_given_z = vec![0.0; nz];
        let mut p_r = vec![vec![vec![0.0; nr]; nz]; 2];
        let mut p_b = vec![vec![vec![vec![0.0; nb]; nr]; nz]; 2];
        let mut y_mean = vec![vec![vec![vec![ybar; nb]; nr]; nz]; 2];
        for z in 0..nz {
            let nxz: Vec<f64> = (0..2).map(|x| cnt[x][z].iter().flatten().sum()).collect();
            let nzz = nxz[0] + nxz[1];
            p_z[z] = nzz / nf;
            p_x1_given_z[z] = if nzz > 0.0 { nxz[1] / nzz } else { 0.5 };
            for x in 0..2 {
                for r in 0..nr {
                    let nxzr: f64 = cnt[x][z][r].iter().sum();
                    p_r[x][z][r] = if nxz[x] > 0.0 {
                        nxzr / nxz[x]
                    } else {
                        1.0 / nr as f64
                    };
                    for b in 0..nb {
                        let c = cnt[x][z][r][b];
                        p_b[x][z][r][b] = if nxzr > 0.0 {
                            c / nxzr
                        } else {
                            1.0 / nb as f64
                        };
                        if c > 0.0 {
                            y_mean[x][z][r][b] = ysum[x][z][r][b] / c;
                        }
                    }
                }
            }
        }
        let (x0, x1) = table.contrast();
        Ok(DiscreteScm {
            x_levels: [x0.to_string(), x1.to_string()],
            z_levels: zl,
            r_levels: rl,
            b_levels: bl,
            p_z,
            p_x1_given_z,
            p_r_given_xz: p_r,
            p_b_given_xzr: p_b,
            y_mean,
            outcome: OutcomeNoise::Gaussian { sd: 0.0 },
        })
    }

    /// Exchange the roles of B and R.
    ///
    /// Only defined when B is independent of R given (X, Z); otherwise the
    /// swapped graph would need an R-on-B edge reversed, which has no
    /// counterpart in this parametrization.
    pub fn swap_mediators(&self) -> Result<DiscreteScm> {
        let (nz, nr, nb) = (self.nz(), self.nr(), self.nb());
        for x in 0..2 {
            for z in 0..nz {
                for r in 1..nr {
                    for b in 0..nb {
                        let d = self.p_b_given_xzr[x][z][r][b] - self.p_b_given_xzr[x][z][0][b];
                        if d.abs() > NORMALIZE_TOL {
                            return Err(Error::invalid(
                                "B depends on R; mediator roles cannot be exchanged",
                            ));
                        }
                    }
                }
            }
        }
        let p_r_given_xz = (0..2)
            .map(|x| {
                (0..nz)
                    .map(|z| self.p_b_given_xzr[x][z][0].clone())
                    .collect()
            })
            .collect();
        let p_b_given_xzr = (0..2)
            .map(|x| {
                (0..nz)
                    .map(|z| vec![self.p_r_given_xz[x][z].clone(); nb])
                    .collect()
            })
            .collect();
        let y_mean = (0..2)
            .map(|x| {
                (0..nz)
                    .map(|z| {
                        (0..nb)
                            .map(|b| (0..nr).map(|r| self.y_mean[x][z][r][b]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(DiscreteScm {
            x_levels: self.x_levels.clone(),
            z_levels: self.z_levels.clone(),
            r_levels: self.b_levels.clone(),
            b_levels: self.r_levels.clone(),
            p_z: self.p_z.clone(),
            p_x1_given_z: self.p_x1_given_z.clone(),
            p_r_given_xz,
            p_b_given_xzr,
            y_mean,
            outcome: self.outcome,
        })
    }
}

fn joint_codes(table: &SfmTable, block: Block) -> Result<(Vec<String>, Vec<usize>)> {
    let n = table.n_rows();
    let mut labels = vec![String::new()];
    let mut codes = vec![0usize; n];
    for col in table.block(block) {
        let ColumnData::Categorical {
            levels, codes: c, ..
        } = &col.data
        else {
            return Err(Error::invalid(format!(
                "column {} is real-valued; the empirical model needs categorical columns",
                col.name
            )));
        };
        let k = levels.len();
        labels = labels
            .iter()
            .flat_map(|prefix| {
                levels.iter().map(move |l| {
                    if prefix.is_empty() {
                        l.clone()
                    } else {
                        format!("{prefix}|{l}")
                    }
                })
            })
            .collect();
        for (code, v) in codes.iter_mut().zip(c) {
            *code = *code * k + *v as usize;
        }
    }
    Ok((labels, codes))
}

/// Exact means of Y under the two arms standardized over Z, computed from the joint.
pub fn standardized_arm_means(scm: &DiscreteScm) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (x, slot) in out.iter_mut().enumerate() {
        for z in 0..scm.nz() {
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..scm.nr() {
                for b in 0..scm.nb() {
                    let p = scm.joint(x, z, r, b);
                    num += p * scm.y_mean[x][z][r][b];
                    den += p;
                }
            }
            if den > 0.0 {
                *slot += scm.p_z[z] * num / den;
            }
        }
    }
    out
}

impl Arm {
    pub fn from_index(i: usize) -> Arm {
        if i == 1 {
            Arm::X1
        } else {
            Arm::X0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimands::Quantity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Degenerate Z; R = X; B copies R; Y = B.
    fn copy_scm() -> DiscreteScm {
        let r_of = |x: usize| {
            if x == 1 {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        };
        DiscreteScm {
            x_levels: ["x0".into(), "x1".into()],
            z_levels: vec!["z".into()],
            r_levels: vec!["0".into(), "1".into()],
            b_levels: vec!["0".into(), "1".into()],
            p_z: vec![1.0],
            p_x1_given_z: vec![0.5],
            p_r_given_xz: (0..2).map(|x| vec![r_of(x)]).collect(),
            p_b_given_xzr: vec![vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]; 2],
            y_mean: vec![vec![vec![vec![0.0, 1.0]; 2]]; 2],
            outcome: OutcomeNoise::Bernoulli,
        }
    }

    #[test]
    fn hand_enumerated_copy_model() {
        let scm = copy_scm();
        scm.validate().unwrap();
        assert_eq!(scm.oracle_exact(&Quantity::Q4.spec()).unwrap(), 1.0);
        assert_eq!(scm.oracle_exact(&Quantity::Q3.spec()).unwrap(), 0.0);
        assert_eq!(scm.oracle_exact(&Quantity::Q5.spec()).unwrap(), 0.0);
        assert_eq!(scm.oracle_exact(&Quantity::Q2.spec()).unwrap(), 1.0);
    }

    #[test]
    fn constant_outcome_gives_constant_quantities() {
        let mut scm = DiscreteScm::random(3, 2, 4, &mut ChaCha8Rng::seed_from_u64(1));
        for v in scm.y_mean.iter_mut().flatten().flatten().flatten() {
            *v = 0.4;
        }
        for q in scm.oracle_quantities() {
            assert!((q - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn toml_round_trip() {
        let scm = DiscreteScm::random(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(7));
        let back = DiscreteScm::from_toml(&scm.to_toml().unwrap()).unwrap();
        assert_eq!(back, scm);
    }

    #[test]
    fn unnormalized_tables_are_rejected() {
        let mut scm = copy_scm();
        scm.p_z = vec![0.9];
        assert!(scm.validate().is_err());
    }

    #[test]
    fn empirical_model_of_a_sample_is_close() {
        let scm = DiscreteScm::random(2, 2, 2, &mut ChaCha8Rng::seed_from_u64(3));
        let t = scm
            .sample(20_000, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let emp = DiscreteScm::empirical(&t).unwrap();
        emp.validate().unwrap();
        for (a, b) in scm.p_z.iter().zip(&emp.p_z) {
            assert!((a - b).abs() < 0.02);
        }
    }
}
