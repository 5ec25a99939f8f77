//! Population-representative applicant profiles.
//!
//! Sampling is ancestral: demographics, state and education from the employed
//! survey rows of an occupation; experience from a truncated normal around a
//! fitted mean; first name from (gender, birth cohort); surname from race.

mod experience;
pub mod fixtures;
mod names;
mod truncnorm;

pub use experience::{
    density_ratio_weights, fit_experience_model, qq_pairs, qq_residuals, sample_experience,
    AgeBand, ExperienceModel, SigmaLevel, MIN_EFFECTIVE_ROWS, WEIGHT_CLIP,
};
pub use names::{FirstNameSampler, SurnameSampler};
pub use truncnorm::{sample_truncated_normal, truncated_normal_moments};

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sfm::grouping::{usps_code, EduLevel, FirstNameTable, Gender, Race, SurnameTable};

pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 44;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    pub gender: Gender,
    pub race: Race,
    pub age: u32,
    /// USPS code.
    pub state: String,
    pub edu_level: EduLevel,
    pub exp_year: f64,
    pub first_name: String,
    pub surname: String,
    pub job: String,
}

impl Profile {
    pub fn check(&self) -> Result<()> {
        if !(MIN_AGE..=MAX_AGE).contains(&self.age) {
            return Err(Error::invalid(format!(
                "{}: age {} out of range",
                self.id, self.age
            )));
        }
        let m = f64::from(self.age - MIN_AGE);
        if !(0.0..=m).contains(&self.exp_year) {
            return Err(Error::invalid(format!(
                "{}: exp_year {} outside [0, {m}]",
                self.id, self.exp_year
            )));
        }
        Ok(())
    }
}

/// Survey row: demographics, state, education, occupation and employment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumsRow {
    pub gender: Gender,
    pub race: Race,
    pub age: u32,
    pub state: String,
    pub edu_level: EduLevel,
    pub occupation: String,
    pub employed: bool,
}

/// Panel row: the same covariates plus observed years of experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub gender: Gender,
    pub race: Race,
    pub age: u32,
    pub state: String,
    pub edu_level: EduLevel,
    pub occupation: String,
    pub exp_year: f64,
}

/// Fields shared by survey rows, panel rows and profiles.
pub trait Covariates {
    fn gender(&self) -> Gender;
    fn race(&self) -> Race;
    fn age(&self) -> u32;
    fn state(&self) -> &str;
    fn edu_level(&self) -> EduLevel;
    fn occupation(&self) -> &str;
}

macro_rules! covariates {
    ($t:ty, $job:ident) => {
        impl Covariates for $t {
            fn gender(&self) -> Gender {
                self.gender
            }
            fn race(&self) -> Race {
                self.race
            }
            fn age(&self) -> u32 {
                self.age
            }
            fn state(&self) -> &str {
                &self.state
            }
            fn edu_level(&self) -> EduLevel {
                self.edu_level
            }
            fn occupation(&self) -> &str {
                &self.$job
            }
        }
    };
}

covariates!(PumsRow, occupation);
covariates!(PanelRow, occupation);
covariates!(Profile, job);

pub(crate) fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(
    reader: R,
    what: &str,
) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("{what} line {}: {e}", i + 2))))
        .collect()
}

pub(crate) fn write_rows<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SourceBundle {
    pub pums: Vec<PumsRow>,
    pub panel: Vec<PanelRow>,
    pub first_names: FirstNameTable,
    pub surnames: SurnameTable,
}

impl SourceBundle {
    pub fn load(pums: &Path, panel: &Path, first_names: &Path, surnames: &Path) -> Result<Self> {
        let open = |p: &Path| {
            std::fs::File::open(p)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))
        };
        let bundle = SourceBundle {
            pums: read_rows(open(pums)?, "survey table")?,
            panel: read_rows(open(panel)?, "panel table")?,
            first_names: FirstNameTable::from_csv(open(first_names)?)?,
            surnames: SurnameTable::from_csv(open(surnames)?)?,
        };
        bundle.check()?;
        Ok(bundle)
    }

    /// Schema compatibility between sources: states resolve and every panel
    /// occupation appears in the survey.
    pub fn check(&self) -> Result<()> {
        for r in &self.pums {
            usps_code(&r.state)?;
        }
        for r in &self.panel {
            usps_code(&r.state)?;
            if !r.exp_year.is_finite() || r.exp_year < 0.0 {
                return Err(Error::invalid(format!(
                    "panel exp_year {} invalid",
                    r.exp_year
                )));
            }
            if !self.pums.iter().any(|p| p.occupation == r.occupation) {
                return Err(Error::Schema(format!(
                    "panel occupation {} is absent from the survey rows",
                    r.occupation
                )));
            }
        }
        Ok(())
    }
}

/// Uniform sampler over eligible survey rows for one occupation.
#[derive(Debug, Clone)]
pub struct P1Sampler {
    rows: Vec<PumsRow>,
}

pub fn build_p1_sampler(pums: &[PumsRow], job: &str) -> Result<P1Sampler> {
    let rows: Vec<PumsRow> = pums
        .iter()
        .filter(|r| r.employed && r.occupation == job && (MIN_AGE..=MAX_AGE).contains(&r.age))
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "no eligible survey rows for occupation {job}"
        )));
    }
    Ok(P1Sampler { rows })
}

impl P1Sampler {
    pub fn rows(&self) -> &[PumsRow] {
        &self.rows
    }

    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.rows.len())
    }
}

/// Per-record generator: stream `index` of a ChaCha8 seeded with `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `n` profiles for `job`; record `i` depends only on `(seed, i)`.
pub fn sample_profiles(
    job: &str,
    n: usize,
    sources: &SourceBundle,
    model: &ExperienceModel,
    first: &FirstNameSampler,
    last: &SurnameSampler,
    seed: u64,
) -> Result<Vec<Profile>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let p1 = build_p1_sampler(&sources.pums, job)?;
    let means = model.mean(p1.rows())?;
    let slug: String = job
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = record_rng(seed, i as u64);
            let k = p1.sample_index(&mut rng);
            let row = &p1.rows()[k];
            let sigma = model.sigma(row.age, row.gender, job).0;
            let exp_year = sample_truncated_normal(
                means[k],
                sigma,
                0.0,
                f64::from(row.age - MIN_AGE),
                &mut rng,
            );
            let profile = Profile {
                id: format!("{slug}-{i:06}"),
                gender: row.gender,
                race: row.race,
                age: row.age,
                state: usps_code(&row.state)?.to_string(),
                edu_level: row.edu_level,
                exp_year,
                first_name: first.sample(row.gender, row.age, &mut rng)?.to_string(),
                surname: last.sample(row.race, &mut rng)?.to_string(),
                job: job.to_string(),
            };
            profile.check()?;
            Ok(profile)
        })
        .collect()
}

pub fn write_profiles<W: Write>(mut w: W, profiles: &[Profile]) -> Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_profiles<R: std::io::BufRead>(r: R) -> Result<Vec<Profile>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(age: u32, employed: bool, job: &str) -> PumsRow {
        PumsRow {
            gender: Gender::Female,
            race: Race::White,
            age,
            state: "CA".into(),
            edu_level: EduLevel::Bachelor,
            occupation: job.into(),
            employed,
        }
    }

    #[test]
    fn eligibility_rules() {
        let rows = vec![
            row(17, true, "Nurses"),
            row(45, true, "Nurses"),
            row(30, false, "Nurses"),
            row(30, true, "Teachers"),
            row(18, true, "Nurses"),
            row(44, true, "Nurses"),
        ];
        let s = build_p1_sampler(&rows, "Nurses").unwrap();
        assert_eq!(
            s.rows().iter().map(|r| r.age).collect::<Vec<_>>(),
            vec![18, 44]
        );
        assert!(build_p1_sampler(&rows[2..3], "Nurses").is_err());
    }

    #[test]
    fn uniform_row_draws() {
        let rows: Vec<_> = (30..33).map(|a| row(a, true, "J")).collect();
        let s = build_p1_sampler(&rows, "J").unwrap();
        let mut counts = [0usize; 3];
        let mut rng = record_rng(1, 0);
        for _ in 0..3000 {
            counts[s.sample_index(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.05);
        }
    }

    #[test]
    fn csv_rows_round_trip() {
        let rows = vec![row(30, true, "Nurses")];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gender,race,age,state,edu_level,occupation,employed"));
        let back: Vec<PumsRow> = read_rows(buf.as_slice(), "t").unwrap();
        assert_eq!(back, rows);
    }
}
