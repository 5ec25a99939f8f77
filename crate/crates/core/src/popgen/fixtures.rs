//! Deterministic synthetic source tables in the same formats as the real
//! survey, panel and name-frequency files.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{record_rng, write_rows, PanelRow, PumsRow, SourceBundle, MIN_AGE};
use crate::error::Result;
use crate::sfm::grouping::{
    EduLevel, FirstNameRecord, FirstNameTable, Gender, Race, SurnameRecord, SurnameTable, STATES,
};

/// The five occupations and their profile counts in the reference corpus.
pub const OCCUPATIONS: [(&str, usize); 5] = [
    ("Registered Nurses", 17_632),
    ("Elementary and Middle School Teachers", 16_188),
    ("Software Developers", 13_370),
    ("Accountants and Auditors", 7_784),
    ("Construction Laborers", 5_910),
];

/// Occupation-specific shape of the synthetic population.
struct JobShape {
    p_female: f64,
    race: [f64; 4],
    /// Weights over `EduLevel::ALL`.
    edu: [f64; 7],
}

fn shape(job: &str) -> JobShape {
    match job {
        "Registered Nurses" => JobShape {
            p_female: 0.87,
            race: [0.66, 0.13, 0.10, 0.11],
            edu: [0.01, 0.05, 0.30, 0.50, 0.12, 0.01, 0.01],
        },
        "Elementary and Middle School Teachers" => JobShape {
            p_female: 0.79,
            race: [0.74, 0.10, 0.03, 0.13],
            edu: [0.01, 0.02, 0.02, 0.50, 0.42, 0.01, 0.02],
        },
        "Software Developers" => JobShape {
            p_female: 0.21,
            race: [0.52, 0.06, 0.34, 0.08],
            edu: [0.04, 0.08, 0.05, 0.53, 0.26, 0.01, 0.03],
        },
        "Accountants and Auditors" => JobShape {
            p_female: 0.58,
            race: [0.65, 0.10, 0.14, 0.11],
            edu: [0.04, 0.08, 0.08, 0.60, 0.17, 0.02, 0.01],
        },
        "Construction Laborers" => JobShape {
            p_female: 0.04,
            race: [0.58, 0.07, 0.02, 0.33],
            edu: [0.62, 0.20, 0.10, 0.07, 0.01, 0.00, 0.00],
        },
        _ => JobShape {
            p_female: 0.5,
            race: [0.6, 0.13, 0.07, 0.2],
            edu: [0.25, 0.2, 0.1, 0.25, 0.15, 0.02, 0.03],
        },
    }
}

/// Rough state population weights (millions), in `STATES` order.
const STATE_WEIGHTS: [f64; 51] = [
    5.1, 0.7, 7.4, 3.1, 39.0, 5.9, 3.6, 1.0, 0.7, 22.6, 11.0, 1.4, 2.0, 12.5, 6.9, 3.2, 2.9, 4.5,
    4.6, 1.4, 6.2, 7.0, 10.0, 5.7, 2.9, 6.2, 1.1, 2.0, 3.2, 1.4, 9.3, 2.1, 19.6, 10.8, 0.8, 11.8,
    4.1, 4.2, 13.0, 1.1, 5.4, 0.9, 7.1, 30.5, 3.4, 0.6, 8.7, 7.8, 1.8, 5.9, 0.6,
];

const FEMALE_NAMES: [(&str, [f64; 3]); 14] = [
    ("Emma", [9.0, 3.0, 1.0]),
    ("Olivia", [8.0, 3.0, 1.0]),
    ("Sophia", [7.0, 4.0, 1.0]),
    ("Ava", [6.0, 1.0, 0.5]),
    ("Madison", [4.0, 6.0, 1.0]),
    ("Ashley", [1.0, 7.0, 6.0]),
    ("Jessica", [0.5, 5.0, 9.0]),
    ("Jennifer", [0.3, 2.0, 9.0]),
    ("Amanda", [0.5, 3.0, 7.0]),
    ("Sarah", [2.0, 5.0, 6.0]),
    ("Ana", [2.0, 2.0, 2.0]),
    ("Mei", [1.0, 1.0, 1.0]),
    ("Aaliyah", [3.0, 2.0, 0.5]),
    ("Jordan", [1.0, 1.0, 0.5]),
];

const MALE_NAMES: [(&str, [f64; 3]); 14] = [
    ("Liam", [9.0, 2.0, 0.5]),
    ("Noah", [8.0, 3.0, 0.5]),
    ("Ethan", [6.0, 5.0, 1.0]),
    ("Mason", [5.0, 2.0, 0.5]),
    ("Tyler", [2.0, 7.0, 4.0]),
    ("Joshua", [2.0, 6.0, 7.0]),
    ("Michael", [3.0, 7.0, 9.0]),
    ("Christopher", [1.0, 5.0, 8.0]),
    ("Matthew", [3.0, 6.0, 6.0]),
    ("David", [3.0, 4.0, 6.0]),
    ("Carlos", [2.0, 2.0, 2.0]),
    ("Wei", [1.0, 1.0, 1.0]),
    ("DeShawn", [1.0, 2.0, 1.0]),
    ("Jordan", [2.0, 2.0, 1.0]),
];

/// Surname, race shares (White, Black, Asian, Other), relative count.
const SURNAMES: [(&str, [f64; 4], f64); 16] = [
    ("Smith", [0.70, 0.23, 0.01, 0.06], 24.0),
    ("Johnson", [0.59, 0.35, 0.01, 0.05], 19.0),
    ("Miller", [0.85, 0.11, 0.01, 0.03], 11.0),
    ("Anderson", [0.75, 0.19, 0.01, 0.05], 8.0),
    ("Sullivan", [0.92, 0.03, 0.01, 0.04], 3.0),
    ("Washington", [0.05, 0.90, 0.01, 0.04], 2.0),
    ("Jackson", [0.39, 0.54, 0.01, 0.06], 7.0),
    ("Banks", [0.43, 0.51, 0.01, 0.05], 2.0),
    ("Kim", [0.05, 0.01, 0.92, 0.02], 3.0),
    ("Nguyen", [0.02, 0.01, 0.95, 0.02], 4.0),
    ("Chen", [0.03, 0.01, 0.94, 0.02], 2.5),
    ("Patel", [0.04, 0.01, 0.92, 0.03], 3.0),
    ("Garcia", [0.05, 0.01, 0.01, 0.93], 11.0),
    ("Diaz", [0.06, 0.01, 0.01, 0.92], 5.0),
    ("Begay", [0.01, 0.00, 0.00, 0.99], 0.5),
    ("Lee", [0.40, 0.17, 0.38, 0.05], 7.0),
];

fn categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(weights)
        .expect("positive weights")
        .sample(rng)
}

fn demographics<R: Rng>(job: &str, rng: &mut R, age_range: (u32, u32), edu_tilt: f64) -> PumsRow {
    let s = shape(job);
    let gender = if rng.random::<f64>() < s.p_female {
        Gender::Female
    } else {
        Gender::Male
    };
    let race = Race::ALL[categorical(&s.race, rng)];
    let age = rng.random_range(age_range.0..=age_range.1);
    let state = STATES[categorical(&STATE_WEIGHTS, rng)].0.to_string();
    let edu: Vec<f64> = s
        .edu
        .iter()
        .enumerate()
        .map(|(i, w)| w * (1.0 + edu_tilt * i as f64) + 1e-3)
        .collect();
    PumsRow {
        gender,
        race,
        age,
        state,
        edu_level: EduLevel::ALL[categorical(&edu, rng)],
        occupation: job.to_string(),
        employed: rng.random::<f64>() < 0.92,
    }
}

/// Mean years of experience used to simulate panel rows.
pub fn synthetic_experience_mean(row: &PanelRow) -> f64 {
    let edu_years = match row.edu_level {
        EduLevel::HighSchool => 0.0,
        EduLevel::SomeCollege | EduLevel::Associate => 2.0,
        EduLevel::Bachelor => 4.0,
        EduLevel::Master => 6.0,
        EduLevel::Professional | EduLevel::Doctorate => 9.0,
    };
    let gap = if row.gender == Gender::Female {
        0.6
    } else {
        0.0
    };
    0.8 * (f64::from(row.age - MIN_AGE) - edu_years).max(0.0) - gap
}

/// Synthetic sources: `pums_per_job` survey rows and `panel_per_job` panel rows
/// for each occupation, plus the name tables. The panel over-represents older
/// and more educated workers so that density-ratio weighting has work to do.
pub fn synthetic_sources(
    jobs: &[&str],
    pums_per_job: usize,
    panel_per_job: usize,
    seed: u64,
) -> Result<SourceBundle> {
    let mut pums = Vec::with_capacity(jobs.len() * pums_per_job);
    let mut panel = Vec::with_capacity(jobs.len() * panel_per_job);
    let noise = Normal::new(0.0, 1.5).expect("valid");
    for (j, job) in jobs.iter().enumerate() {
        let mut rng = record_rng(seed, 2 * j as u64);
        for _ in 0..pums_per_job {
            pums.push(demographics(job, &mut rng, (16, 50), 0.0));
        }
        let mut rng = record_rng(seed, 2 * j as u64 + 1);
        for _ in 0..panel_per_job {
            let d = demographics(job, &mut rng, (MIN_AGE, 44), 0.3);
            let mut row = PanelRow {
                gender: d.gender,
                race: d.race,
                age: d.age.max(rng.random_range(MIN_AGE..=44)),
                state: d.state,
                edu_level: d.edu_level,
                occupation: d.occupation,
                exp_year: 0.0,
            };
            let m = f64::from(row.age - MIN_AGE);
            row.exp_year = (synthetic_experience_mean(&row) + noise.sample(&mut rng)).clamp(0.0, m);
            panel.push(row);
        }
    }
    let bundle = SourceBundle {
        pums,
        panel,
        first_names: synthetic_first_names()?,
        surnames: synthetic_surnames()?,
    };
    bundle.check()?;
    Ok(bundle)
}

/// Representative birth years for the three cohorts.
const COHORT_YEARS: [[i32; 3]; 3] = [[1998, 2001, 2004], [1988, 1991, 1995], [1979, 1982, 1986]];

/// Share of a name's births recorded under the other gender.
const CROSS_GENDER_SHARE: f64 = 0.15;

/// First-name counts. Every name also carries a minority of births under the
/// other gender, so name typicality is informative about gender but not
/// deterministic.
pub fn synthetic_first_names() -> Result<FirstNameTable> {
    let mut records = Vec::new();
    for (gender, other, names) in [
        (Gender::Female, Gender::Male, &FEMALE_NAMES),
        (Gender::Male, Gender::Female, &MALE_NAMES),
    ] {
        for (name, by_cohort) in names.iter() {
            for (c, years) in COHORT_YEARS.iter().enumerate() {
                for &birth_year in years {
                    let count = (by_cohort[c] * 1000.0).round();
                    for (g, k) in [
                        (gender, count),
                        (other, (count * CROSS_GENDER_SHARE).round()),
                    ] {
                        records.push(FirstNameRecord {
                            name: name.to_string(),
                            gender: g,
                            birth_year,
                            count: k,
                        });
                    }
                }
            }
        }
    }
    FirstNameTable::new(records)
}

pub fn synthetic_surnames() -> Result<SurnameTable> {
    SurnameTable::new(
        SURNAMES
            .iter()
            .map(|(s, shares, count)| SurnameRecord {
                surname: s.to_string(),
                shares: *shares,
                count: *count,
            })
            .collect(),
    )
}

/// File names used by [`write_bundle`].
pub const BUNDLE_FILES: [&str; 4] = ["pums.csv", "panel.csv", "first_names.csv", "surnames.csv"];

/// Writes the four source tables into `dir` under [`BUNDLE_FILES`].
pub fn write_bundle(dir: &Path, bundle: &SourceBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| std::fs::File::create(dir.join(name));
    write_rows(create(BUNDLE_FILES[0])?, &bundle.pums)?;
    write_rows(create(BUNDLE_FILES[1])?, &bundle.panel)?;

    let mut w = csv::Writer::from_writer(create(BUNDLE_FILES[2])?);
    w.write_record(["name", "gender", "birth_year", "count"])?;
    for r in bundle.first_names.records() {
        w.write_record([
            r.name.clone(),
            r.gender.label().to_string(),
            r.birth_year.to_string(),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(BUNDLE_FILES[3])?);
    w.write_record([
        "surname", "p_white", "p_black", "p_asian", "p_other", "count",
    ])?;
    for r in bundle.surnames.records() {
        let mut rec = vec![r.surname.clone()];
        rec.extend(r.shares.iter().chain([&r.count]).map(f64::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a bundle written by [`write_bundle`].
pub fn load_bundle(dir: &Path) -> Result<SourceBundle> {
    let p = |i: usize| dir.join(BUNDLE_FILES[i]);
    SourceBundle::load(&p(0), &p(1), &p(2), &p(3))
}
