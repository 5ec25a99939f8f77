//! Categorical grouping applied to high-cardinality profile fields before estimation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Year against which ages are converted to birth years.
pub const REFERENCE_YEAR: i32 = 2023;

macro_rules! labelled_enum {
    ($(#[$m:meta])* $name:ident, $kind:literal { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn code(self) -> u32 {
                Self::ALL.iter().position(|v| *v == self).unwrap() as u32
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let t = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label().eq_ignore_ascii_case(t))
                    .ok_or_else(|| Error::Unknown { kind: $kind, value: s.to_string() })
            }
        }
    };
}

labelled_enum!(Gender, "gender" { Female => "Female", Male => "Male" });
labelled_enum!(Race, "race" { White => "White", Black => "Black", Asian => "Asian", Other => "Other" });
labelled_enum!(GenderTypicality, "gender typicality" { Male => "male", Female => "female", Neutral => "neutral" });
labelled_enum!(AgeTypicality, "age typicality" { Young => "young", Mid => "mid", Old => "old", Neutral => "neutral" });
labelled_enum!(RaceTypicality, "race typicality" { Asian => "asian", Black => "black", White => "white", Neutral => "neutral" });
labelled_enum!(Region, "region" { Northeast => "Northeast", Midwest => "Midwest", South => "South", West => "West" });
labelled_enum!(EduBand, "education band" { Low => "low", Medium => "medium", High => "high" });
labelled_enum!(
    /// Seven-level education category, in ascending order.
    EduLevel, "education level" {
        HighSchool => "HS/GED",
        SomeCollege => "Some college",
        Associate => "Associate",
        Bachelor => "Bachelor",
        Master => "Master",
        Professional => "Professional",
        Doctorate => "Doctorate",
    }
);
labelled_enum!(
    /// Birth-year band used both for name typicality and name sampling.
    Cohort, "cohort" { Young => "young", Mid => "mid", Old => "old" }
);

impl Cohort {
    pub fn from_birth_year(year: i32) -> Cohort {
        match year {
            y if y >= 1997 => Cohort::Young,
            y if y >= 1988 => Cohort::Mid,
            _ => Cohort::Old,
        }
    }

    pub fn from_age(age: u32) -> Cohort {
        Cohort::from_birth_year(REFERENCE_YEAR - age as i32)
    }

    fn typicality(self) -> AgeTypicality {
        match self {
            Cohort::Young => AgeTypicality::Young,
            Cohort::Mid => AgeTypicality::Mid,
            Cohort::Old => AgeTypicality::Old,
        }
    }
}

/// (USPS code, full name, Census region) for the 50 states and DC.
pub const STATES: &[(&str, &str, Region)] = {
    use Region::*;
    &[
        ("AL", "Alabama", South),
        ("AK", "Alaska", West),
        ("AZ", "Arizona", West),
        ("AR", "Arkansas", South),
        ("CA", "California", West),
        ("CO", "Colorado", West),
        ("CT", "Connecticut", Northeast),
        ("DE", "Delaware", South),
        ("DC", "District of Columbia", South),
        ("FL", "Florida", South),
        ("GA", "Georgia", South),
        ("HI", "Hawaii", West),
        ("ID", "Idaho", West),
        ("IL", "Illinois", Midwest),
        ("IN", "Indiana", Midwest),
        ("IA", "Iowa", Midwest),
        ("KS", "Kansas", Midwest),
        ("KY", "Kentucky", South),
        ("LA", "Louisiana", South),
        ("ME", "Maine", Northeast),
        ("MD", "Maryland", South),
        ("MA", "Massachusetts", Northeast),
        ("MI", "Michigan", Midwest),
        ("MN", "Minnesota", Midwest),
        ("MS", "Mississippi", South),
        ("MO", "Missouri", Midwest),
        ("MT", "Montana", West),
        ("NE", "Nebraska", Midwest),
        ("NV", "Nevada", West),
        ("NH", "New Hampshire", Northeast),
        ("NJ", "New Jersey", Northeast),
        ("NM", "New Mexico", West),
        ("NY", "New York", Northeast),
        ("NC", "North Carolina", South),
        ("ND", "North Dakota", Midwest),
        ("OH", "Ohio", Midwest),
        ("OK", "Oklahoma", South),
        ("OR", "Oregon", West),
        ("PA", "Pennsylvania", Northeast),
        ("RI", "Rhode Island", Northeast),
        ("SC", "South Carolina", South),
        ("SD", "South Dakota", Midwest),
        ("TN", "Tennessee", South),
        ("TX", "Texas", South),
        ("UT", "Utah", West),
        ("VT", "Vermont", Northeast),
        ("VA", "Virginia", South),
        ("WA", "Washington", West),
        ("WV", "West Virginia", South),
        ("WI", "Wisconsin", Midwest),
        ("WY", "Wyoming", West),
    ]
};

fn state_entry(state: &str) -> Result<&'static (&'static str, &'static str, Region)> {
    let s = state.trim();
    STATES
        .iter()
        .find(|(code, name, _)| code.eq_ignore_ascii_case(s) || name.eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Unknown {
            kind: "state",
            value: state.to_string(),
        })
}

/// Two-letter USPS code for a state given by code or full name.
pub fn usps_code(state: &str) -> Result<&'static str> {
    state_entry(state).map(|e| e.0)
}

pub fn group_state(state: &str) -> Result<Region> {
    state_entry(state).map(|e| e.2)
}

pub fn default_edu_band(level: EduLevel) -> EduBand {
    match level {
        EduLevel::HighSchool | EduLevel::SomeCollege => EduBand::Low,
        EduLevel::Associate | EduLevel::Bachelor => EduBand::Medium,
        EduLevel::Master | EduLevel::Professional | EduLevel::Doctorate => EduBand::High,
    }
}

pub fn group_education(level: &str) -> Result<EduBand> {
    level.parse().map(default_edu_band)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub gender_typicality_threshold: f64,
    pub age_typicality_threshold: f64,
    pub surname_race_threshold: f64,
    /// Overrides keyed by USPS code; states not listed use the Census region.
    pub region_map: BTreeMap<String, Region>,
    /// Overrides keyed by education level label.
    pub edu_band_map: BTreeMap<String, EduBand>,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            gender_typicality_threshold: 0.75,
            age_typicality_threshold: 0.5,
            surname_race_threshold: 0.5,
            region_map: BTreeMap::new(),
            edu_band_map: BTreeMap::new(),
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, k: usize| {
            let lo = 1.0 / k as f64;
            if v > lo && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in ({lo}, 1]")))
            }
        };
        check(
            "gender_typicality_threshold",
            self.gender_typicality_threshold,
            2,
        )?;
        check(
            "age_typicality_threshold",
            self.age_typicality_threshold,
            Cohort::ALL.len(),
        )?;
        check(
            "surname_race_threshold",
            self.surname_race_threshold,
            Race::ALL.len(),
        )?;
        for state in self.region_map.keys() {
            usps_code(state)?;
        }
        for level in self.edu_band_map.keys() {
            level.parse::<EduLevel>()?;
        }
        Ok(())
    }

    pub fn region(&self, state: &str) -> Result<Region> {
        let code = usps_code(state)?;
        Ok(match self.region_map.get(code) {
            Some(r) => *r,
            None => group_state(code)?,
        })
    }

    pub fn edu_band(&self, level: EduLevel) -> EduBand {
        self.edu_band_map
            .get(level.label())
            .copied()
            .unwrap_or_else(|| default_edu_band(level))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstNameRecord {
    pub name: String,
    pub gender: Gender,
    pub birth_year: i32,
    pub count: f64,
}

/// First-name frequencies by gender and birth year.
#[derive(Debug, Clone, Default)]
pub struct FirstNameTable {
    records: Vec<FirstNameRecord>,
    /// Lower-cased name -> [gender][cohort] counts.
    totals: HashMap<String, [[f64; 3]; 2]>,
}

fn parse_gender(s: &str) -> Result<Gender> {
    match s.trim().to_ascii_lowercase().as_str() {
        "m" | "male" => Ok(Gender::Male),
        "f" | "female" => Ok(Gender::Female),
        _ => Err(Error::Parse(format!(
            "unknown gender {s:?} in frequency table"
        ))),
    }
}

fn check_count(count: f64, what: &str) -> Result<f64> {
    if count.is_finite() && count >= 0.0 {
        Ok(count)
    } else {
        Err(Error::Parse(format!(
            "{what}: count {count} must be finite and nonnegative"
        )))
    }
}

impl FirstNameTable {
    pub fn new(records: Vec<FirstNameRecord>) -> Result<Self> {
        let mut totals: HashMap<String, [[f64; 3]; 2]> = HashMap::new();
        for r in &records {
            check_count(r.count, &r.name)?;
            let cohort = Cohort::from_birth_year(r.birth_year);
            totals.entry(r.name.to_lowercase()).or_default()[r.gender.code() as usize]
                [cohort.code() as usize] += r.count;
        }
        Ok(FirstNameTable { records, totals })
    }

    /// Reads `name,gender,birth_year,count` rows with a header line.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse(format!("first-name table lacks column {name}")))
        };
        let (cn, cg, cy, cc) = (
            col("name")?,
            col("gender")?,
            col("birth_year")?,
            col("count")?,
        );
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |c: usize| row.get(c).unwrap_or("");
            let bad =
                |what: &str| Error::Parse(format!("first-name table line {}: bad {what}", i + 2));
            records.push(FirstNameRecord {
                name: field(cn).to_string(),
                gender: parse_gender(field(cg))?,
                birth_year: field(cy).parse().map_err(|_| bad("birth_year"))?,
                count: field(cc).parse().map_err(|_| bad("count"))?,
            });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[FirstNameRecord] {
        &self.records
    }

    /// Counts for a name, indexed `[gender][cohort]`; `None` when absent.
    pub fn counts(&self, name: &str) -> Option<&[[f64; 3]; 2]> {
        self.totals.get(&name.to_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurnameRecord {
    pub surname: String,
    /// Shares in `Race::ALL` order.
    pub shares: [f64; 4],
    /// Relative frequency of the surname; 1 when the table has no count column.
    pub count: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SurnameTable {
    records: Vec<SurnameRecord>,
    index: HashMap<String, usize>,
}

impl SurnameTable {
    pub fn new(records: Vec<SurnameRecord>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            check_count(r.count, &r.surname)?;
            for s in r.shares {
                check_count(s, &r.surname)?;
            }
            if r.shares.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Parse(format!(
                    "surname {} has all-zero shares",
                    r.surname
                )));
            }
            index.insert(r.surname.to_lowercase(), i);
        }
        Ok(SurnameTable { records, index })
    }

    /// Reads `surname,p_white,p_black,p_asian,p_other[,count]` rows with a header line.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let col = |name: &str| {
            find(name).ok_or_else(|| Error::Parse(format!("surname table lacks column {name}")))
        };
        let cs = col("surname")?;
        let shares = [
            col("p_white")?,
            col("p_black")?,
            col("p_asian")?,
            col("p_other")?,
        ];
        let cc = find("count");
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |c: usize| -> Result<f64> {
                row.get(c)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Parse(format!("surname table line {}: bad number", i + 2)))
            };
            records.push(SurnameRecord {
                surname: row.get(cs).unwrap_or("").to_string(),
                shares: [
                    num(shares[0])?,
                    num(shares[1])?,
                    num(shares[2])?,
                    num(shares[3])?,
                ],
                count: cc.map(num).transpose()?.unwrap_or(1.0),
            });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[SurnameRecord] {
        &self.records
    }

    pub fn get(&self, surname: &str) -> Option<&SurnameRecord> {
        self.index
            .get(&surname.to_lowercase())
            .map(|&i| &self.records[i])
    }
}

/// Index of the strictly dominant entry, if its share exceeds `threshold`.
fn dominant(values: &[f64], threshold: f64) -> Option<usize> {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return None;
    }
    values
        .iter()
        .enumerate()
        .find(|(_, v)| **v / total > threshold)
        .map(|(i, _)| i)
}

pub fn group_first_name(
    table: &FirstNameTable,
    name: &str,
    cfg: &GroupingConfig,
) -> (GenderTypicality, AgeTypicality) {
    let Some(counts) = table.counts(name) else {
        return (GenderTypicality::Neutral, AgeTypicality::Neutral);
    };
    let by_gender: Vec<f64> = counts.iter().map(|c| c.iter().sum()).collect();
    let gender = match dominant(&by_gender, cfg.gender_typicality_threshold) {
        Some(g) if Gender::ALL[g] == Gender::Male => GenderTypicality::Male,
        Some(_) => GenderTypicality::Female,
        None => GenderTypicality::Neutral,
    };
    let by_cohort: Vec<f64> = (0..3).map(|c| counts[0][c] + counts[1][c]).collect();
    let age = dominant(&by_cohort, cfg.age_typicality_threshold)
        .map_or(AgeTypicality::Neutral, |c| Cohort::ALL[c].typicality());
    (gender, age)
}

pub fn group_surname(table: &SurnameTable, surname: &str, cfg: &GroupingConfig) -> RaceTypicality {
    let Some(rec) = table.get(surname) else {
        return RaceTypicality::Neutral;
    };
    match dominant(&rec.shares, cfg.surname_race_threshold).map(|i| Race::ALL[i]) {
        Some(Race::White) => RaceTypicality::White,
        Some(Race::Black) => RaceTypicality::Black,
        Some(Race::Asian) => RaceTypicality::Asian,
        _ => RaceTypicality::Neutral,
    }
}
