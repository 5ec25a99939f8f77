use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::audit::{exp_band, FeatureContext, ProfileFeatures, EXP_BAND_CUTS};
use crate::error::{Error, Result};
use crate::estimands::{effects_from_quantities, DiscreteScm, EffectSet, OutcomeNoise};
use crate::popgen::{ExperienceModel, FirstNameSampler, PumsRow, SurnameSampler, MAX_AGE, MIN_AGE};
use crate::sfm::grouping::{
    group_first_name, group_surname, AgeTypicality, EduBand, Gender, GenderTypicality, Race,
    RaceTypicality, Region,
};

/// Clamped linear scorer over grouped profile features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScorerParams {
    pub intercept: f64,
    /// Shift for the x1 arm.
    pub x: f64,
    /// By code of the other protected attribute; gender uses the first two.
    pub other: [f64; 4],
    /// Per year of age above 18.
    pub age: f64,
    pub edu_band: [f64; 3],
    pub exp_band: [f64; 4],
    pub region: [f64; 4],
    pub gender_typicality: [f64; 3],
    pub age_typicality: [f64; 4],
    pub race_typicality: [f64; 4],
    /// Extra shift for x1 by education band.
    pub x_by_edu_band: [f64; 3],
    pub noise_sd: f64,
    pub clamp: [f64; 2],
}

impl Default for SyntheticScorerParams {
    fn default() -> Self {
        SyntheticScorerParams {
            intercept: 50.0,
            x: 0.0,
            other: [0.0; 4],
            age: 0.0,
            edu_band: [0.0; 3],
            exp_band: [0.0; 4],
            region: [0.0; 4],
            gender_typicality: [0.0; 3],
            age_typicality: [0.0; 4],
            race_typicality: [0.0; 4],
            x_by_edu_band: [0.0; 3],
            noise_sd: 5.0,
            clamp: [0.0, 100.0],
        }
    }
}

impl SyntheticScorerParams {
    /// Depends on confounders only, so every effect is zero.
    pub fn structural_zero() -> Self {
        SyntheticScorerParams {
            intercept: 45.0,
            other: [0.0, -2.0, 1.0, -1.0],
            age: 0.4,
            ..Default::default()
        }
    }

    /// Only the protected attribute moves the score.
    pub fn x_only(shift: f64) -> Self {
        SyntheticScorerParams {
            x: shift,
            ..Default::default()
        }
    }

    pub fn generic() -> Self {
        SyntheticScorerParams {
            intercept: 42.0,
            x: 3.0,
            other: [0.0, -2.0, 1.5, -1.0],
            age: 0.15,
            edu_band: [-5.0, 0.0, 7.0],
            exp_band: [0.0, 4.0, 7.0, 10.0],
            region: [1.0, 0.0, -1.5, 2.0],
            gender_typicality: [2.5, -2.5, 0.0],
            age_typicality: [1.0, 0.0, -1.0, 0.0],
            race_typicality: [-2.0, -3.0, 2.0, 0.0],
            x_by_edu_band: [0.0, 1.0, 2.0],
            noise_sd: 6.0,
            clamp: [0.0, 100.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.intercept, self.x, self.age, self.noise_sd]
            .into_iter()
            .chain(self.other)
            .chain(self.edu_band)
            .chain(self.exp_band)
            .chain(self.region)
            .chain(self.gender_typicality)
            .chain(self.age_typicality)
            .chain(self.race_typicality)
            .chain(self.x_by_edu_band)
            .chain(self.clamp);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "synthetic scorer coefficients must be finite".into(),
            ));
        }
        if self.noise_sd < 0.0 || self.clamp[0] >= self.clamp[1] {
            return Err(Error::Config(
                "need noise_sd >= 0 and clamp[0] < clamp[1]".into(),
            ));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn linear_parts(
        &self,
        is_x1: bool,
        other: u32,
        age: u32,
        edu: usize,
        exp: usize,
        region: usize,
        gt: usize,
        at: usize,
        rt: usize,
    ) -> f64 {
        let x = if is_x1 {
            self.x + self.x_by_edu_band[edu]
        } else {
            0.0
        };
        self.intercept
            + x
            + self.other[other as usize]
            + self.age * f64::from(age - MIN_AGE)
            + self.edu_band[edu]
            + self.exp_band[exp]
            + self.region[region]
            + self.gender_typicality[gt]
            + self.age_typicality[at]
            + self.race_typicality[rt]
    }

    /// Unclamped, noise-free score.
    pub fn linear(&self, f: &ProfileFeatures) -> f64 {
        self.linear_parts(
            f.is_x1,
            f.other,
            f.age,
            f.edu_band.code() as usize,
            f.exp_band(),
            f.region.code() as usize,
            f.gender_typicality.code() as usize,
            f.age_typicality.code() as usize,
            f.race_typicality.code() as usize,
        )
    }
}

pub fn synthetic_score<R: Rng>(
    f: &ProfileFeatures,
    params: &SyntheticScorerParams,
    rng: &mut R,
) -> Result<f64> {
    let mu = params.linear(f);
    if !mu.is_finite() {
        return Err(Error::invalid(format!(
            "synthetic score mean {mu} is not finite"
        )));
    }
    let eps: f64 = rng.sample(StandardNormal);
    Ok((mu + params.noise_sd * eps).clamp(params.clamp[0], params.clamp[1]))
}

/// E[clamp(N(mu, sd²), lo, hi)].
pub fn censored_normal_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return mu.clamp(lo, hi);
    }
    let n = Normal::new(0.0, 1.0).expect("valid");
    let (a, b) = ((lo - mu) / sd, (hi - mu) / sd);
    lo * n.cdf(a) + hi * n.sf(b) + mu * mass(a, b) + sd * (n.pdf(a) - n.pdf(b))
}

/// Φ(b) − Φ(a), evaluated in whichever tail keeps precision.
fn mass(a: f64, b: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("valid");
    if a > 0.0 {
        n.cdf(-a) - n.cdf(-b)
    } else {
        n.cdf(b) - n.cdf(a)
    }
}

/// Band probabilities of a normal truncated to `[0, m]`, mirroring the sampler.
fn band_probabilities(mean: f64, sd: f64, m: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    if m <= 0.0 || sd <= 0.0 {
        out[exp_band(mean.clamp(0.0, m.max(0.0)))] = 1.0;
        return out;
    }
    let z = |x: f64| (x - mean) / sd;
    let total = mass(z(0.0), z(m));
    if total < 1e-300 {
        out[exp_band(if mean < 0.0 { 0.0 } else { m })] = 1.0;
        return out;
    }
    let edges = [
        0.0,
        EXP_BAND_CUTS[0],
        EXP_BAND_CUTS[1],
        EXP_BAND_CUTS[2],
        f64::INFINITY,
    ];
    for j in 0..4 {
        let (lo, hi) = (edges[j].min(m), edges[j + 1].min(m));
        if hi > lo {
            out[j] = mass(z(lo), z(hi)) / total;
        }
    }
    out
}

const AGES: usize = (MAX_AGE - MIN_AGE + 1) as usize;
const NR: usize = 4 * 3 * 4 * 4;
const NB: usize = 3 * 4;

fn r_index(region: usize, gt: usize, at: usize, rt: usize) -> usize {
    ((region * 3 + gt) * 4 + at) * 4 + rt
}

/// The exact discrete model implied by the profile sampler and the synthetic
/// scorer: Z = (other protected attribute, age), R = (region, name
/// typicalities), B = (education band, experience band).
pub fn induced_scm(
    params: &SyntheticScorerParams,
    ctx: &FeatureContext,
    rows: &[PumsRow],
    model: &ExperienceModel,
    first: &FirstNameSampler,
    last: &SurnameSampler,
) -> Result<DiscreteScm> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::invalid("no population rows"));
    }
    let contrast = ctx.contrast;
    let n_other = contrast.other_levels();
    let nz = n_other * AGES;
    let mut joint = vec![vec![vec![[0.0f64; NB]; NR]; nz]; 2];

    let mut names: HashMap<(Gender, u32), Vec<((usize, usize), f64)>> = HashMap::new();
    let mut surnames: HashMap<Race, [f64; 4]> = HashMap::new();
    let means = model.mean(rows)?;
    let w = 1.0 / rows.len() as f64;
    for (row, mean) in rows.iter().zip(means) {
        if !(MIN_AGE..=MAX_AGE).contains(&row.age) {
            return Err(Error::invalid(format!("population row aged {}", row.age)));
        }
        if !names.contains_key(&(row.gender, row.age)) {
            let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
            for (name, p) in first.distribution(row.gender, row.age)? {
                let (g, a) = group_first_name(ctx.first_names, name, ctx.grouping);
                *acc.entry((g.code() as usize, a.code() as usize))
                    .or_default() += p;
            }
            let mut v: Vec<_> = acc.into_iter().collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            names.insert((row.gender, row.age), v);
        }
        if !surnames.contains_key(&row.race) {
            let mut acc = [0.0; 4];
            for (name, p) in last.distribution(row.race)? {
                acc[group_surname(ctx.surnames, name, ctx.grouping).code() as usize] += p;
            }
            surnames.insert(row.race, acc);
        }
        let x = usize::from(contrast.is_x1(row.gender, row.race));
        let z = contrast.other_code(row.gender, row.race) as usize * AGES
            + (row.age - MIN_AGE) as usize;
        let region = ctx.grouping.region(&row.state)?.code() as usize;
        let edu = ctx.grouping.edu_band(row.edu_level).code() as usize;
        let sigma = model.sigma(row.age, row.gender, &row.occupation).0;
        let bands = band_probabilities(mean, sigma, f64::from(row.age - MIN_AGE));
        let rt_dist = surnames[&row.race];
        for &((gt, at), pn) in &names[&(row.gender, row.age)] {
            for (rt, prt) in rt_dist.iter().enumerate() {
                if *prt == 0.0 {
                    continue;
                }
                let cell = &mut joint[x][z][r_index(region, gt, at, rt)];
                for (e, pe) in bands.iter().enumerate() {
                    cell[edu * 4 + e] += w * pn * prt * pe;
                }
            }
        }
    }

    let (other_name, other_levels) = contrast.other();
    let mut scm = DiscreteScm {
        x_levels: [
            contrast.levels().0.to_string(),
            contrast.levels().1.to_string(),
        ],
        z_levels: (0..nz)
            .map(|z| format!("{}|{}", other_levels[z / AGES], MIN_AGE as usize + z % AGES))
            .collect(),
        r_levels: (0..NR).map(r_label).collect(),
        b_levels: (0..NB)
            .map(|b| {
                format!(
                    "{}|{}",
                    EduBand::ALL[b / 4],
                    crate::audit::EXP_BAND_LABELS[b % 4]
                )
            })
            .collect(),
        p_z: vec![0.0; nz],
        p_x1_given_z: vec![0.0; nz],
        p_r_given_xz: vec![vec![vec![1.0 / NR as f64; NR]; nz]; 2],
        p_b_given_xzr: vec![vec![vec![vec![1.0 / NB as f64; NB]; NR]; nz]; 2],
        y_mean: vec![vec![vec![vec![0.0; NB]; NR]; nz]; 2],
        outcome: OutcomeNoise::Gaussian {
            sd: params.noise_sd,
        },
    };
    let total: f64 = joint.iter().flatten().flatten().flatten().sum();
    for z in 0..nz {
        let px: [f64; 2] = [0, 1].map(|x| joint[x][z].iter().flatten().sum::<f64>() / total);
        scm.p_z[z] = px[0] + px[1];
        if scm.p_z[z] > 0.0 {
            if px[0] == 0.0 || px[1] == 0.0 {
                return Err(Error::invalid(format!(
                    "{other_name} and age cell {} has profiles from one arm only",
                    scm.z_levels[z]
                )));
            }
            scm.p_x1_given_z[z] = px[1] / scm.p_z[z];
        } else {
            scm.p_x1_given_z[z] = 0.5;
        }
        for x in 0..2 {
            let xz: f64 = joint[x][z].iter().flatten().sum();
            for r in 0..NR {
                let xzr: f64 = joint[x][z][r].iter().sum();
                if xz > 0.0 {
                    scm.p_r_given_xz[x][z][r] = xzr / xz;
                }
                if xzr > 0.0 {
                    for b in 0..NB {
                        scm.p_b_given_xzr[x][z][r][b] = joint[x][z][r][b] / xzr;
                    }
                }
                let (region, gt, at, rt) = (r / 48, (r / 16) % 3, (r / 4) % 4, r % 4);
                for b in 0..NB {
                    let mu = params.linear_parts(
                        x == 1,
                        (z / AGES) as u32,
                        MIN_AGE + (z % AGES) as u32,
                        b / 4,
                        b % 4,
                        region,
                        gt,
                        at,
                        rt,
                    );
                    scm.y_mean[x][z][r][b] =
                        censored_normal_mean(mu, params.noise_sd, params.clamp[0], params.clamp[1]);
                }
            }
        }
    }
    let s: f64 = scm.p_z.iter().sum();
    scm.p_z.iter_mut().for_each(|p| *p /= s);
    renormalize(&mut scm);
    scm.validate()?;
    Ok(scm)
}

fn renormalize(scm: &mut DiscreteScm) {
    let fix = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= s);
    };
    for x in 0..2 {
        for z in 0..scm.nz() {
            fix(&mut scm.p_r_given_xz[x][z]);
            for r in 0..scm.nr() {
                fix(&mut scm.p_b_given_xzr[x][z][r]);
            }
        }
    }
}

fn r_label(r: usize) -> String {
    format!(
        "{}|{}|{}|{}",
        Region::ALL[r / 48],
        GenderTypicality::ALL[(r / 16) % 3],
        AgeTypicality::ALL[(r / 4) % 4],
        RaceTypicality::ALL[r % 4]
    )
}

/// Exact effects of the synthetic scorer on the sampled population.
pub fn synthetic_oracle_effects(scm: &DiscreteScm) -> Result<EffectSet> {
    effects_from_quantities(scm.oracle_quantities())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn censored_mean_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mu, sd) in [(95.0, 10.0), (2.0, 5.0), (50.0, 3.0), (120.0, 5.0)] {
            let n = 200_000;
            let s: f64 = (0..n)
                .map(|_| (mu + sd * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 100.0))
                .sum();
            let exact = censored_normal_mean(mu, sd, 0.0, 100.0);
            assert!(
                (s / n as f64 - exact).abs() < 0.05,
                "{mu} {sd}: {} vs {exact}",
                s / n as f64
            );
        }
        assert_eq!(censored_normal_mean(130.0, 0.0, 0.0, 100.0), 100.0);
    }

    #[test]
    fn band_probabilities_sum_to_one() {
        for (m, s, hi) in [
            (5.0, 2.0, 10.0),
            (-30.0, 1.0, 4.0),
            (40.0, 1.0, 12.0),
            (3.0, 1.0, 0.0),
        ] {
            let p = band_probabilities(m, s, hi);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{p:?}");
        }
        assert_eq!(band_probabilities(-30.0, 1.0, 4.0)[0], 1.0);
        assert_eq!(band_probabilities(40.0, 1.0, 12.0)[3], 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(SyntheticScorerParams::generic().validate().is_ok());
        let mut p = SyntheticScorerParams::generic();
        p.x = f64::NAN;
        assert!(p.validate().is_err());
        let p: SyntheticScorerParams = toml::from_str("x = 4.0\nnoise_sd = 0.0").unwrap();
        assert_eq!((p.x, p.intercept), (4.0, 50.0));
    }
}
