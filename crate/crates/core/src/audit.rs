//! Mapping from generated profiles to the causal roles used for estimation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::popgen::{Profile, MIN_AGE};
use crate::sfm::grouping::{
    group_first_name, group_surname, AgeTypicality, EduBand, FirstNameTable, Gender,
    GenderTypicality, GroupingConfig, Race, RaceTypicality, Region, SurnameTable,
};
use crate::sfm::{Column, Role, SfmTable};

/// Protected attribute under audit and its two arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// x0 = Female, x1 = Male.
    Gender,
    /// x0 = Non-White, x1 = White.
    Race,
}

impl Contrast {
    pub fn protected_name(self) -> &'static str {
        match self {
            Contrast::Gender => "gender",
            Contrast::Race => "race",
        }
    }

    pub fn levels(self) -> (&'static str, &'static str) {
        match self {
            Contrast::Gender => ("Female", "Male"),
            Contrast::Race => ("Non-White", "White"),
        }
    }

    pub fn is_x1(self, gender: Gender, race: Race) -> bool {
        match self {
            Contrast::Gender => gender == Gender::Male,
            Contrast::Race => race == Race::White,
        }
    }

    /// Name and levels of the other protected attribute, which is a confounder.
    pub fn other(self) -> (&'static str, Vec<String>) {
        match self {
            Contrast::Gender => (
                "race",
                Race::ALL.iter().map(|r| r.label().to_string()).collect(),
            ),
            Contrast::Race => (
                "gender",
                Gender::ALL.iter().map(|g| g.label().to_string()).collect(),
            ),
        }
    }

    pub fn other_code(self, gender: Gender, race: Race) -> u32 {
        match self {
            Contrast::Gender => race.code(),
            Contrast::Race => gender.code(),
        }
    }

    pub fn other_levels(self) -> usize {
        self.other().1.len()
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.protected_name())
    }
}

impl FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Contrast::Gender),
            "race" => Ok(Contrast::Race),
            _ => Err(Error::Unknown {
                kind: "protected attribute",
                value: s.to_string(),
            }),
        }
    }
}

/// Upper edges of the experience bands `[0,3)`, `[3,6)`, `[6,10)`, `[10,∞)`.
pub const EXP_BAND_CUTS: [f64; 3] = [3.0, 6.0, 10.0];
pub const EXP_BAND_LABELS: [&str; 4] = ["0-3", "3-6", "6-10", "10+"];

pub fn exp_band(exp_year: f64) -> usize {
    EXP_BAND_CUTS.iter().filter(|c| exp_year >= **c).count()
}

/// Everything about a profile that a screener could condition on, grouped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileFeatures {
    pub is_x1: bool,
    pub other: u32,
    pub age: u32,
    pub edu_band: EduBand,
    pub exp_year: f64,
    pub region: Region,
    pub gender_typicality: GenderTypicality,
    pub age_typicality: AgeTypicality,
    pub race_typicality: RaceTypicality,
}

impl ProfileFeatures {
    pub fn exp_band(&self) -> usize {
        exp_band(self.exp_year)
    }
}

/// Lookup tables needed to group profile fields.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub contrast: Contrast,
    pub first_names: &'a FirstNameTable,
    pub surnames: &'a SurnameTable,
    pub grouping: &'a GroupingConfig,
}

impl FeatureContext<'_> {
    pub fn features(&self, p: &Profile) -> Result<ProfileFeatures> {
        let (gender_typicality, age_typicality) =
            group_first_name(self.first_names, &p.first_name, self.grouping);
        Ok(ProfileFeatures {
            is_x1: self.contrast.is_x1(p.gender, p.race),
            other: self.contrast.other_code(p.gender, p.race),
            age: p.age,
            edu_band: self.grouping.edu_band(p.edu_level),
            exp_year: p.exp_year,
            region: self.grouping.region(&p.state)?,
            gender_typicality,
            age_typicality,
            race_typicality: group_surname(self.surnames, &p.surname, self.grouping),
        })
    }
}

fn labels<T: fmt::Display>(all: &[T]) -> Vec<String> {
    all.iter().map(ToString::to_string).collect()
}

/// Estimation table: Z = (other protected attribute, age), B = (education
/// band, years of experience), R = (region, first-name gender and age
/// typicality, surname race typicality).
pub fn audit_table(
    features: &[ProfileFeatures],
    scores: &[f64],
    contrast: Contrast,
) -> Result<SfmTable> {
    if features.len() != scores.len() {
        return Err(Error::Schema(format!(
            "{} profiles but {} scores",
            features.len(),
            scores.len()
        )));
    }
    let col = |f: fn(&ProfileFeatures) -> u32| features.iter().map(f).collect::<Vec<u32>>();
    let (other_name, other_levels) = contrast.other();
    let z = vec![
        Column::categorical(other_name, Role::Confounder, other_levels, col(|f| f.other)),
        Column::real(
            "age",
            Role::Confounder,
            features
                .iter()
                .map(|f| f64::from(f.age - MIN_AGE))
                .collect(),
        ),
    ];
    let b = vec![
        Column::ordinal(
            "edu_band",
            Role::BusinessMediator,
            labels(EduBand::ALL),
            col(|f| f.edu_band.code()),
        ),
        Column::real(
            "exp_year",
            Role::BusinessMediator,
            features.iter().map(|f| f.exp_year).collect(),
        ),
    ];
    let r = vec![
        Column::categorical(
            "region",
            Role::RedliningMediator,
            labels(Region::ALL),
            col(|f| f.region.code()),
        ),
        Column::categorical(
            "first_name_gender",
            Role::RedliningMediator,
            labels(GenderTypicality::ALL),
            col(|f| f.gender_typicality.code()),
        ),
        Column::categorical(
            "first_name_age",
            Role::RedliningMediator,
            labels(AgeTypicality::ALL),
            col(|f| f.age_typicality.code()),
        ),
        Column::categorical(
            "surname_race",
            Role::RedliningMediator,
            labels(RaceTypicality::ALL),
            col(|f| f.race_typicality.code()),
        ),
    ];
    SfmTable::new(
        contrast.protected_name(),
        contrast.levels(),
        features.iter().map(|f| f.is_x1).collect(),
        z,
        b,
        r,
        "score",
        scores.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experience_bands() {
        let b: Vec<usize> = [0.0, 2.99, 3.0, 5.99, 6.0, 9.99, 10.0, 26.0]
            .iter()
            .map(|e| exp_band(*e))
            .collect();
        assert_eq!(b, [0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn contrast_arms() {
        assert!(Contrast::Gender.is_x1(Gender::Male, Race::Black));
        assert!(!Contrast::Race.is_x1(Gender::Male, Race::Black));
        assert_eq!("Race".parse::<Contrast>().unwrap(), Contrast::Race);
        assert_eq!(Contrast::Race.other_levels(), 2);
    }
}
