use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::sfm::grouping::{Cohort, FirstNameTable, Gender, Race, SurnameTable};

/// Names with cumulative weights for inverse-CDF draws.
#[derive(Debug, Clone, Default)]
struct Slice {
    names: Vec<String>,
    cumulative: Vec<f64>,
}

impl Slice {
    fn from_counts(counts: HashMap<&str, f64>) -> Slice {
        let mut items: Vec<(&str, f64)> = counts.into_iter().filter(|(_, c)| *c > 0.0).collect();
        items.sort_by(|a, b| a.0.cmp(b.0));
        let mut acc = 0.0;
        let mut s = Slice::default();
        for (n, c) in items {
            acc += c;
            s.names.push(n.to_string());
            s.cumulative.push(acc);
        }
        s
    }

    fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn probabilities(&self) -> Vec<(&str, f64)> {
        let total = *self.cumulative.last().expect("non-empty slice");
        let mut prev = 0.0;
        self.names
            .iter()
            .zip(&self.cumulative)
            .map(|(n, c)| {
                let p = (c - prev) / total;
                prev = *c;
                (n.as_str(), p)
            })
            .collect()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> &str {
        let total = *self.cumulative.last().expect("non-empty slice");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.names[i.min(self.names.len() - 1)]
    }
}

/// First names conditional on (gender, birth cohort), falling back to gender only.
#[derive(Debug, Default)]
pub struct FirstNameSampler {
    slices: HashMap<(Gender, Cohort), Slice>,
    by_gender: HashMap<Gender, Slice>,
    fallbacks: AtomicU64,
}

impl FirstNameSampler {
    pub fn new(table: &FirstNameTable) -> Self {
        let mut cells: HashMap<(Gender, Cohort), HashMap<&str, f64>> = HashMap::new();
        let mut genders: HashMap<Gender, HashMap<&str, f64>> = HashMap::new();
        for r in table.records() {
            let cohort = Cohort::from_birth_year(r.birth_year);
            *cells
                .entry((r.gender, cohort))
                .or_default()
                .entry(r.name.as_str())
                .or_default() += r.count;
            *genders
                .entry(r.gender)
                .or_default()
                .entry(r.name.as_str())
                .or_default() += r.count;
        }
        FirstNameSampler {
            slices: cells
                .into_iter()
                .map(|(k, v)| (k, Slice::from_counts(v)))
                .collect(),
            by_gender: genders
                .into_iter()
                .map(|(k, v)| (k, Slice::from_counts(v)))
                .collect(),
            fallbacks: AtomicU64::new(0),
        }
    }

    pub fn sample<R: Rng>(&self, gender: Gender, age: u32, rng: &mut R) -> Result<&str> {
        let cohort = Cohort::from_age(age);
        match self.slices.get(&(gender, cohort)) {
            Some(s) if !s.is_empty() => Ok(s.draw(rng)),
            _ => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                match self.by_gender.get(&gender) {
                    Some(s) if !s.is_empty() => Ok(s.draw(rng)),
                    _ => Err(Error::invalid(format!(
                        "no first names for gender {gender}"
                    ))),
                }
            }
        }
    }

    /// The slice `sample` would draw from, as (name, probability) pairs.
    pub fn distribution(&self, gender: Gender, age: u32) -> Result<Vec<(&str, f64)>> {
        match self.slices.get(&(gender, Cohort::from_age(age))) {
            Some(s) if !s.is_empty() => Ok(s.probabilities()),
            _ => match self.by_gender.get(&gender) {
                Some(s) if !s.is_empty() => Ok(s.probabilities()),
                _ => Err(Error::invalid(format!(
                    "no first names for gender {gender}"
                ))),
            },
        }
    }

    /// Draws that used the gender-only fallback.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

/// Surnames conditional on race, falling back to the overall distribution.
#[derive(Debug, Default)]
pub struct SurnameSampler {
    by_race: HashMap<Race, Slice>,
    overall: Slice,
    fallbacks: AtomicU64,
}

impl SurnameSampler {
    pub fn new(table: &SurnameTable) -> Self {
        let mut by_race = HashMap::new();
        for (k, race) in Race::ALL.iter().enumerate() {
            let counts = table
                .records()
                .iter()
                .map(|r| (r.surname.as_str(), r.count * r.shares[k]))
                .collect();
            by_race.insert(*race, Slice::from_counts(counts));
        }
        let overall = Slice::from_counts(
            table
                .records()
                .iter()
                .map(|r| (r.surname.as_str(), r.count))
                .collect(),
        );
        SurnameSampler {
            by_race,
            overall,
            fallbacks: AtomicU64::new(0),
        }
    }

    pub fn sample<R: Rng>(&self, race: Race, rng: &mut R) -> Result<&str> {
        match self.by_race.get(&race) {
            Some(s) if !s.is_empty() => Ok(s.draw(rng)),
            _ => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                if self.overall.is_empty() {
                    return Err(Error::invalid("surname table is empty"));
                }
                Ok(self.overall.draw(rng))
            }
        }
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn distribution(&self, race: Race) -> Result<Vec<(&str, f64)>> {
        match self.by_race.get(&race) {
            Some(s) if !s.is_empty() => Ok(s.probabilities()),
            _ if !self.overall.is_empty() => Ok(self.overall.probabilities()),
            _ => Err(Error::invalid("surname table is empty")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::grouping::FirstNameRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(name: &str, gender: Gender, year: i32, count: f64) -> FirstNameRecord {
        FirstNameRecord {
            name: name.into(),
            gender,
            birth_year: year,
            count,
        }
    }

    #[test]
    fn proportional_draws() {
        let t = FirstNameTable::new(vec![
            rec("A", Gender::Female, 1990, 9.0),
            rec("B", Gender::Female, 1990, 1.0),
        ])
        .unwrap();
        let s = FirstNameSampler::new(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = (0..10_000)
            .filter(|_| s.sample(Gender::Female, 30, &mut rng).unwrap() == "A")
            .count();
        assert!((a as f64 / 10_000.0 - 0.9).abs() < 0.02);
        let d = s.distribution(Gender::Female, 30).unwrap();
        assert_eq!(d, vec![("A", 0.9), ("B", 0.1)]);
        assert_eq!(s.fallbacks(), 0);
    }

    #[test]
    fn single_name_slice() {
        let t = FirstNameTable::new(vec![rec("Only", Gender::Male, 2000, 3.0)]).unwrap();
        let s = FirstNameSampler::new(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..50).all(|_| s.sample(Gender::Male, 20, &mut rng).unwrap() == "Only"));
    }

    #[test]
    fn empty_cohort_falls_back_and_counts() {
        let t = FirstNameTable::new(vec![rec("Old", Gender::Male, 1960, 3.0)]).unwrap();
        let s = FirstNameSampler::new(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(s.sample(Gender::Male, 20, &mut rng).unwrap(), "Old");
        assert_eq!(s.fallbacks(), 1);
        assert!(s.sample(Gender::Female, 20, &mut rng).is_err());
    }

    #[test]
    fn surnames_by_race_with_fallback() {
        let t = SurnameTable::from_csv(
            "surname,p_white,p_black,p_asian,p_other\nKim,0,0,1,0\nSmith,0.7,0.3,0,0\n".as_bytes(),
        )
        .unwrap();
        let s = SurnameSampler::new(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(s.sample(Race::Asian, &mut rng).unwrap(), "Kim");
        assert_eq!(s.sample(Race::White, &mut rng).unwrap(), "Smith");
        s.sample(Race::Other, &mut rng).unwrap();
        assert_eq!(s.fallbacks(), 1);
    }
}
