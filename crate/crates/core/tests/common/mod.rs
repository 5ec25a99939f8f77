#![allow(dead_code)]

pub mod mock;

use audit_core::learners::{BoostedFactory, LearnerGrid};
use audit_core::popgen::fixtures::{synthetic_sources, OCCUPATIONS};
use audit_core::popgen::*;

pub fn small_factory() -> BoostedFactory {
    BoostedFactory::new(LearnerGrid::single(30, 3, 1.0))
}

pub struct World {
    pub sources: SourceBundle,
    pub model: ExperienceModel,
    pub first: FirstNameSampler,
    pub last: SurnameSampler,
}

impl World {
    pub fn new() -> World {
        let jobs: Vec<&str> = OCCUPATIONS.iter().map(|o| o.0).collect();
        let sources = synthetic_sources(&jobs, 4000, 1500, 11).unwrap();
        let weights =
            density_ratio_weights(&sources.panel, &sources.pums, &small_factory()).unwrap();
        let model = fit_experience_model(&sources.panel, &weights, &small_factory()).unwrap();
        let first = FirstNameSampler::new(&sources.first_names);
        let last = SurnameSampler::new(&sources.surnames);
        World {
            sources,
            model,
            first,
            last,
        }
    }

    pub fn draw(&self, job: &str, n: usize, seed: u64) -> Vec<Profile> {
        sample_profiles(
            job,
            n,
            &self.sources,
            &self.model,
            &self.first,
            &self.last,
            seed,
        )
        .unwrap()
    }

    /// Profiles for all five occupations at the reference corpus sizes.
    pub fn corpus(&self, seed: u64) -> Vec<Profile> {
        OCCUPATIONS
            .iter()
            .enumerate()
            .flat_map(|(i, (job, n))| self.draw(job, *n, seed + i as u64))
            .collect()
    }
}

pub mod minimality {
    use std::collections::BTreeSet;

    use audit_core::popgen::fixtures::OCCUPATIONS;
    use audit_core::popgen::{Profile, MAX_AGE, MIN_AGE};
    use audit_core::sfm::grouping::{EduLevel, Gender, Race, STATES};
    use rand::seq::IndexedRandom;
    use rand::Rng;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    pub enum Field {
        FirstName,
        Surname,
        Gender,
        Race,
        Age,
        State,
        EduLevel,
        ExpYear,
        Job,
    }

    pub const FIELDS: [Field; 9] = [
        Field::FirstName,
        Field::Surname,
        Field::Gender,
        Field::Race,
        Field::Age,
        Field::State,
        Field::EduLevel,
        Field::ExpYear,
        Field::Job,
    ];

    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    pub enum Region {
        Name,
        Location,
        Email,
        Phone,
        Skills,
        Work,
        /// Education lines that differ only in four-digit year tokens.
        EducationYears,
        Education,
    }

    /// Regions the text may change in when `field` changes.
    pub fn allowed(field: Field) -> BTreeSet<Region> {
        use Region::*;
        match field {
            Field::FirstName | Field::Surname => [Name, Email].into(),
            Field::Gender | Field::Race => BTreeSet::new(),
            Field::Age => [EducationYears].into(),
            Field::State => [Location].into(),
            Field::EduLevel => [Education, EducationYears].into(),
            Field::ExpYear => [Work, EducationYears].into(),
            Field::Job => [Skills, Work, Education, EducationYears].into(),
        }
    }

    fn split(text: &str) -> Vec<Vec<&str>> {
        let lines: Vec<&str> = text.lines().collect();
        let mut regions = vec![Vec::new(); 7];
        for (i, l) in lines.iter().take(4).enumerate() {
            regions[i].push(*l);
        }
        let mut current = None;
        for l in &lines[4..] {
            match *l {
                "SKILLS" => current = Some(4),
                "WORK HISTORY" => current = Some(5),
                "EDUCATION" => current = Some(6),
                "" => {}
                _ => regions[current.expect("content after a heading")].push(*l),
            }
        }
        regions
    }

    fn is_year(t: &str) -> bool {
        t.len() == 4 && t.chars().all(|c| c.is_ascii_digit())
    }

    fn differ_only_in_years(a: &[&str], b: &[&str]) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| {
                let (tx, ty): (Vec<&str>, Vec<&str>) = (
                    x.split_whitespace().collect(),
                    y.split_whitespace().collect(),
                );
                tx.len() == ty.len()
                    && tx
                        .iter()
                        .zip(&ty)
                        .all(|(p, q)| p == q || (is_year(p) && is_year(q)))
            })
    }

    /// Regions whose text differs between two renderings.
    pub fn changed(a: &str, b: &str) -> BTreeSet<Region> {
        use Region::*;
        let (ra, rb) = (split(a), split(b));
        let mut out = BTreeSet::new();
        for (i, region) in [Name, Location, Email, Phone, Skills, Work]
            .into_iter()
            .enumerate()
        {
            if ra[i] != rb[i] {
                out.insert(region);
            }
        }
        if ra[6] != rb[6] {
            out.insert(if differ_only_in_years(&ra[6], &rb[6]) {
                EducationYears
            } else {
                Education
            });
        }
        out
    }

    /// `p` with `field` set to a different valid value; `None` when no valid
    /// alternative exists.
    pub fn flip<R: Rng>(
        p: &Profile,
        field: Field,
        names: &[String],
        surnames: &[String],
        rng: &mut R,
    ) -> Option<Profile> {
        let mut q = p.clone();
        match field {
            Field::FirstName => {
                q.first_name = names
                    .iter()
                    .filter(|n| **n != p.first_name)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_string()
            }
            Field::Surname => {
                q.surname = surnames
                    .iter()
                    .filter(|n| **n != p.surname)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_string()
            }
            Field::Gender => {
                q.gender = if p.gender == Gender::Male {
                    Gender::Female
                } else {
                    Gender::Male
                }
            }
            Field::Race => {
                q.race = *Race::ALL
                    .iter()
                    .filter(|r| **r != p.race)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_owned()
            }
            Field::Age => {
                let lo = MIN_AGE + p.exp_year.ceil() as u32;
                let ages: Vec<u32> = (lo..=MAX_AGE).filter(|a| *a != p.age).collect();
                q.age = *ages.choose(rng)?;
            }
            Field::State => {
                q.state = STATES
                    .iter()
                    .map(|s| s.0)
                    .filter(|s| *s != p.state)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_string()
            }
            Field::EduLevel => {
                q.edu_level = *EduLevel::ALL
                    .iter()
                    .filter(|e| **e != p.edu_level)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_owned()
            }
            Field::ExpYear => q.exp_year = rng.random_range(0.0..=f64::from(p.age - MIN_AGE)),
            Field::Job => {
                q.job = OCCUPATIONS
                    .iter()
                    .map(|o| o.0)
                    .filter(|j| *j != p.job)
                    .collect::<Vec<_>>()
                    .choose(rng)?
                    .to_string()
            }
        }
        Some(q)
    }
}
