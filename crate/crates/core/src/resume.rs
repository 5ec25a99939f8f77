//! Deterministic rule-based rendering of profiles into plain-text resumes.
//!
//! Every section draws from its own random substream keyed by (seed, profile
//! id, section), so changing one profile field only perturbs the sections that
//! read that field.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::popgen::{Profile, MIN_AGE};
use crate::sfm::grouping::{usps_code, EduLevel, REFERENCE_YEAR};

/// Calendar year treated as the present.
pub const PRESENT_YEAR: i32 = REFERENCE_YEAR;

/// Bullets per role, when the pool is large enough.
pub const BULLETS_PER_ROLE: usize = 2;
pub const SKILLS_PER_RESUME: usize = 5;

const BUILTIN_POOLS: &str = include_str!("../assets/pools.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seniority {
    Junior,
    Mid,
    Senior,
}

impl Seniority {
    /// Seniority of role `i` (0 = earliest) out of `k` roles.
    pub fn for_role(i: usize, k: usize) -> Seniority {
        if i == 0 {
            Seniority::Junior
        } else if i + 1 == k && k >= 3 {
            Seniority::Senior
        } else {
            Seniority::Mid
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByLevel<T> {
    pub junior: T,
    pub mid: T,
    pub senior: T,
}

impl<T> ByLevel<T> {
    pub fn get(&self, s: Seniority) -> &T {
        match s {
            Seniority::Junior => &self.junior,
            Seniority::Mid => &self.mid,
            Seniority::Senior => &self.senior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolPools {
    pub high_school: Vec<String>,
    /// Some college and associate degrees.
    pub college: Vec<String>,
    pub university: Vec<String>,
    pub graduate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPool {
    pub companies: Vec<String>,
    pub majors: Vec<String>,
    pub skills: Vec<String>,
    pub titles: ByLevel<Vec<String>>,
    pub bullets: ByLevel<Vec<String>>,
}

/// Fictional schools, companies and phrasing per occupation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentPools {
    pub email_domains: Vec<String>,
    pub schools: SchoolPools,
    pub jobs: BTreeMap<String, JobPool>,
}

fn non_empty(pool: &[String], what: &str) -> Result<()> {
    if pool.is_empty() || pool.iter().any(|s| s.trim().is_empty()) {
        return Err(Error::Config(format!(
            "content pool {what} is empty or has blank entries"
        )));
    }
    Ok(())
}

impl ContentPools {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_POOLS).expect("built-in pools are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let pools: ContentPools =
            toml::from_str(text).map_err(|e| Error::Config(format!("content pools: {e}")))?;
        pools.validate()?;
        Ok(pools)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        non_empty(&self.email_domains, "email_domains")?;
        let s = &self.schools;
        for (pool, name) in [
            (&s.high_school, "schools.high_school"),
            (&s.college, "schools.college"),
            (&s.university, "schools.university"),
            (&s.graduate, "schools.graduate"),
        ] {
            non_empty(pool, name)?;
        }
        for (job, p) in &self.jobs {
            for (pool, name) in [
                (&p.companies, "companies"),
                (&p.majors, "majors"),
                (&p.skills, "skills"),
                (&p.titles.junior, "titles.junior"),
                (&p.titles.mid, "titles.mid"),
                (&p.titles.senior, "titles.senior"),
                (&p.bullets.junior, "bullets.junior"),
                (&p.bullets.mid, "bullets.mid"),
                (&p.bullets.senior, "bullets.senior"),
            ] {
                non_empty(pool, &format!("{job}.{name}"))?;
            }
        }
        Ok(())
    }

    pub fn job(&self, job: &str) -> Result<&JobPool> {
        self.jobs.get(job).ok_or_else(|| Error::Unknown {
            kind: "occupation with content pools",
            value: job.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub name: String,
    /// USPS code.
    pub location: String,
    pub email: String,
    pub phone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EducationEntry {
    pub school: String,
    pub degree: String,
    pub major: Option<String>,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEntry {
    pub company: String,
    pub title: String,
    pub seniority: Seniority,
    pub start: i32,
    /// `None` for the current role.
    pub end: Option<i32>,
    pub bullets: Vec<String>,
}

impl RoleEntry {
    pub fn end_year(&self) -> i32 {
        self.end.unwrap_or(PRESENT_YEAR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeDoc {
    pub contact: Contact,
    pub skills: Vec<String>,
    /// Earliest role first.
    pub work: Vec<RoleEntry>,
    /// Earliest entry first.
    pub education: Vec<EducationEntry>,
}

/// Independent random substreams, one per resume section.
#[derive(Debug, Clone, Copy)]
enum Section {
    Contact = 0,
    Skills = 1,
    Work = 2,
    Education = 3,
}

/// Seed material for one profile: SHA-256 over the corpus seed and profile id.
pub fn render_key(seed: u64, profile_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(profile_id.as_bytes());
    h.finalize().into()
}

fn section_rng(key: &[u8; 32], section: Section) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(*key);
    rng.set_stream(section as u64);
    rng
}

/// Years of experience as rendered: rounded half up.
pub fn rendered_experience(exp_year: f64) -> i32 {
    (exp_year + 0.5).floor() as i32
}

/// Number of roles for an amount of experience.
pub fn role_count(exp_year: f64) -> usize {
    match exp_year {
        e if e < 3.0 => 1,
        e if e < 6.0 => 2,
        e if e < 10.0 => 3,
        _ => 4,
    }
}

/// Years from age 18 to completing `level`, and for two-entry levels the
/// years the advanced degree adds beyond the Bachelor.
pub fn degree_years(level: EduLevel) -> (i32, Option<i32>) {
    match level {
        EduLevel::HighSchool => (0, None),
        EduLevel::SomeCollege | EduLevel::Associate => (2, None),
        EduLevel::Bachelor => (4, None),
        EduLevel::Master => (6, Some(2)),
        EduLevel::Professional => (7, Some(3)),
        EduLevel::Doctorate => (9, Some(5)),
    }
}

fn first_role_start(p: &Profile) -> i32 {
    PRESENT_YEAR - rendered_experience(p.exp_year)
}

pub fn render_contact(p: &Profile, pools: &ContentPools, key: &[u8; 32]) -> Result<Contact> {
    let mut rng = section_rng(key, Section::Contact);
    let token = |s: &str| -> String {
        s.chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect()
    };
    let suffix: u32 = rng.random_range(100..1000);
    let domain = pools.email_domains.choose(&mut rng).expect("validated");
    let area = rng.random_range(201..990);
    let line = rng.random_range(100..200);
    Ok(Contact {
        name: format!("{} {}", p.first_name, p.surname),
        location: usps_code(&p.state)?.to_string(),
        email: format!(
            "{}.{}{suffix}@{domain}",
            token(&p.first_name),
            token(&p.surname)
        ),
        phone: format!("({area}) 555-0{line}"),
    })
}

pub fn render_skills(p: &Profile, pools: &ContentPools, key: &[u8; 32]) -> Result<Vec<String>> {
    let pool = &pools.job(&p.job)?.skills;
    let mut rng = section_rng(key, Section::Skills);
    Ok(pool
        .choose_multiple(&mut rng, SKILLS_PER_RESUME.min(pool.len()))
        .cloned()
        .collect())
}

pub fn render_work_history(
    p: &Profile,
    pools: &ContentPools,
    key: &[u8; 32],
) -> Result<Vec<RoleEntry>> {
    if !(p.exp_year.is_finite() && p.exp_year >= 0.0) {
        return Err(Error::invalid(format!(
            "{}: exp_year {} is invalid",
            p.id, p.exp_year
        )));
    }
    let pool = pools.job(&p.job)?;
    let mut rng = section_rng(key, Section::Work);
    let years = rendered_experience(p.exp_year);
    let k = role_count(p.exp_year);
    let mut companies = pool.companies.clone();
    companies.shuffle(&mut rng);
    let base = years / k as i32;
    let extra = (years % k as i32) as usize;
    let mut start = PRESENT_YEAR - years;
    let mut roles = Vec::with_capacity(k);
    for i in 0..k {
        let seniority = Seniority::for_role(i, k);
        let span = base + i32::from(i >= k - extra);
        let bullets = pool.bullets.get(seniority);
        roles.push(RoleEntry {
            company: companies[i % companies.len()].clone(),
            title: pool
                .titles
                .get(seniority)
                .choose(&mut rng)
                .expect("validated")
                .clone(),
            seniority,
            start,
            end: (i + 1 < k).then_some(start + span),
            bullets: bullets
                .choose_multiple(&mut rng, BULLETS_PER_ROLE.min(bullets.len()))
                .cloned()
                .collect(),
        });
        start += span;
    }
    Ok(roles)
}

fn degree_name(level: EduLevel) -> &'static str {
    match level {
        EduLevel::HighSchool => "High School Diploma",
        EduLevel::SomeCollege => "College Coursework",
        EduLevel::Associate => "Associate Degree",
        EduLevel::Bachelor => "Bachelor's Degree",
        EduLevel::Master => "Master's Degree",
        EduLevel::Professional => "Professional Degree",
        EduLevel::Doctorate => "Doctoral Degree",
    }
}

pub fn render_education(
    p: &Profile,
    pools: &ContentPools,
    key: &[u8; 32],
) -> Result<Vec<EducationEntry>> {
    let job = pools.job(&p.job)?;
    let mut rng = section_rng(key, Section::Education);
    let birth = PRESENT_YEAR - p.age as i32;
    let (total, advanced) = degree_years(p.edu_level);
    // Graduation may not follow the start of work or the present.
    let last = (birth + MIN_AGE as i32 + total).min(first_role_start(p));
    let s = &pools.schools;
    let mut pick = |pool: &[String]| pool.choose(&mut rng).expect("validated").clone();
    let entry =
        |school: String, level: EduLevel, major: Option<String>, year: i32| EducationEntry {
            school,
            degree: degree_name(level).to_string(),
            major,
            year,
        };
    Ok(match (p.edu_level, advanced) {
        (EduLevel::HighSchool, _) => vec![entry(pick(&s.high_school), p.edu_level, None, last)],
        (EduLevel::SomeCollege | EduLevel::Associate, _) => {
            let school = pick(&s.college);
            vec![entry(school, p.edu_level, Some(pick(&job.majors)), last)]
        }
        (level, Some(extra)) => {
            let (u, m) = (pick(&s.university), pick(&job.majors));
            let (g, gm) = (pick(&s.graduate), pick(&job.majors));
            let first = (last - extra).max(birth + MIN_AGE as i32);
            vec![
                entry(u, EduLevel::Bachelor, Some(m), first),
                entry(g, level, Some(gm), last),
            ]
        }
        (level, None) => {
            let school = pick(&s.university);
            vec![entry(school, level, Some(pick(&job.majors)), last)]
        }
    })
}

pub fn build_resume(p: &Profile, pools: &ContentPools, seed: u64) -> Result<ResumeDoc> {
    p.check()?;
    let key = render_key(seed, &p.id);
    Ok(ResumeDoc {
        contact: render_contact(p, pools, &key)?,
        skills: render_skills(p, pools, &key)?,
        work: render_work_history(p, pools, &key)?,
        education: render_education(p, pools, &key)?,
    })
}

pub const SECTION_HEADINGS: [&str; 3] = ["SKILLS", "WORK HISTORY", "EDUCATION"];

impl ResumeDoc {
    /// Plain-text rendering with the fixed section order.
    pub fn text(&self) -> String {
        let mut t = String::new();
        let c = &self.contact;
        let _ = writeln!(t, "{}", c.name);
        let _ = writeln!(t, "Location: {}", c.location);
        let _ = writeln!(t, "Email: {}", c.email);
        let _ = writeln!(t, "Phone: {}", c.phone);
        let _ = writeln!(t, "\n{}", SECTION_HEADINGS[0]);
        let _ = writeln!(t, "{}", self.skills.join(", "));
        let _ = writeln!(t, "\n{}", SECTION_HEADINGS[1]);
        for r in self.work.iter().rev() {
            let end = r.end.map_or("Present".to_string(), |e| e.to_string());
            let _ = writeln!(t, "{} | {} | {} - {}", r.title, r.company, r.start, end);
            for b in &r.bullets {
                let _ = writeln!(t, "- {b}");
            }
        }
        let _ = writeln!(t, "\n{}", SECTION_HEADINGS[2]);
        for e in self.education.iter().rev() {
            match &e.major {
                Some(m) => {
                    let _ = writeln!(t, "{} in {} | {} | {}", e.degree, m, e.school, e.year);
                }
                None => {
                    let _ = writeln!(t, "{} | {} | {}", e.degree, e.school, e.year);
                }
            }
        }
        t
    }

    /// Education end ≤ first role start ≤ last role end ≤ present, with
    /// contiguous, non-overlapping roles.
    pub fn check_timeline(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        let (Some(first), Some(last)) = (self.work.first(), self.work.last()) else {
            return bad("no roles".into());
        };
        let edu_end = self
            .education
            .iter()
            .map(|e| e.year)
            .max()
            .unwrap_or(i32::MIN);
        if edu_end > first.start {
            return bad(format!(
                "education ends {edu_end} after work starts {}",
                first.start
            ));
        }
        if last.end.is_some() || last.end_year() > PRESENT_YEAR {
            return bad("last role does not run to the present".into());
        }
        for w in self.work.windows(2) {
            if w[0].end != Some(w[1].start) || w[0].start > w[1].start {
                return bad(format!(
                    "roles {}..{:?} and {} are not contiguous",
                    w[0].start, w[0].end, w[1].start
                ));
            }
        }
        if self.work.iter().any(|r| r.end_year() < r.start) {
            return bad("negative role duration".into());
        }
        if self.education.windows(2).any(|w| w[0].year > w[1].year) {
            return bad("education entries out of order".into());
        }
        Ok(())
    }
}

/// A rendered resume as emitted to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeRecord {
    pub profile_id: String,
    pub job: String,
    pub render_seed: u64,
    pub text: String,
}

pub fn render_resume(p: &Profile, pools: &ContentPools, seed: u64) -> Result<ResumeRecord> {
    let doc = build_resume(p, pools, seed)?;
    Ok(ResumeRecord {
        profile_id: p.id.clone(),
        job: p.job.clone(),
        render_seed: seed,
        text: doc.text(),
    })
}

/// Renders a corpus. Email suffixes that collide with an earlier document are
/// advanced deterministically until unique.
pub fn render_corpus(
    profiles: &[Profile],
    pools: &ContentPools,
    seed: u64,
) -> Result<Vec<(ResumeDoc, ResumeRecord)>> {
    let mut docs: Vec<ResumeDoc> = profiles
        .par_iter()
        .map(|p| build_resume(p, pools, seed))
        .collect::<Result<_>>()?;
    let ids: HashSet<&str> = profiles.iter().map(|p| p.id.as_str()).collect();
    if ids.len() != profiles.len() {
        return Err(Error::invalid("profile ids are not unique"));
    }
    let mut seen = HashSet::new();
    for d in &mut docs {
        while !seen.insert(d.contact.email.clone()) {
            d.contact.email = bump_suffix(&d.contact.email);
        }
    }
    Ok(docs
        .into_iter()
        .zip(profiles)
        .map(|(d, p)| {
            let record = ResumeRecord {
                profile_id: p.id.clone(),
                job: p.job.clone(),
                render_seed: seed,
                text: d.text(),
            };
            (d, record)
        })
        .collect())
}

fn bump_suffix(email: &str) -> String {
    let (local, domain) = email.split_once('@').unwrap_or((email, ""));
    let digits = local.len() - local.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (stem, num) = local.split_at(local.len() - digits);
    let next = num.parse::<u64>().map_or(100, |n| n + 1);
    format!("{stem}{next}@{domain}")
}

pub fn write_records<W: Write>(mut w: W, records: &[ResumeRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: std::io::BufRead>(r: R) -> Result<Vec<ResumeRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
