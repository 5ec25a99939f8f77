use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use audit_core::audit::{audit_table, FeatureContext, ProfileFeatures};
use audit_core::casebook::{classify, CaseCell, CaseLabel};
use audit_core::dml::{
    estimate_effects, BootstrapOptions, Corruption, CrossfitOptions, EffectReport, Learners,
};
use audit_core::estimands::Effects;
use audit_core::learners::{BoostedFactory, LearnerGrid, LoggingFactory, SelectionCount};
use audit_core::popgen::{
    density_ratio_weights, fit_experience_model, read_profiles, record_rng, sample_profiles,
    write_profiles, ExperienceModel, FirstNameSampler, Profile, SourceBundle, SurnameSampler,
};
use audit_core::resume::{read_records, render_corpus, write_records, ContentPools, ResumeRecord};
use audit_core::scorer::{
    build_prompt, read_score_records, score_remote, synthetic_score, write_score_records,
    ScoreCache, ScoreJob, ScoreRecord, SyntheticScorerParams,
};
use audit_core::sfm::grouping::GroupingConfig;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, AuditConfig, LoadedConfig, ScorerConfig};

pub const PROFILES: &str = "profiles.jsonl";
pub const GENERATE_META: &str = "generate.json";
pub const RESUMES: &str = "resumes.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const SCORE_META: &str = "score.json";
pub const ESTIMATES: &str = "estimates.json";
pub const CASES: &str = "cases.json";

pub const SYNTHETIC_ID: &str = "synthetic";

/// Writes through a temporary file so a crash never leaves a torn artifact.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = open_artifact(path)?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("{} has an unexpected schema", path.display()))
}

fn open_artifact(path: &Path) -> Result<File> {
    File::open(path).with_context(|| {
        format!(
            "missing stage input {}; run the upstream stage first",
            path.display()
        )
    })
}

pub struct Run {
    pub loaded: LoadedConfig,
}

impl Run {
    pub fn cfg(&self) -> &AuditConfig {
        &self.loaded.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg().out_dir.join(name)
    }

    pub fn sources(&self) -> Result<SourceBundle> {
        let s = &self.cfg().sources;
        Ok(SourceBundle::load(
            &s.pums,
            &s.panel,
            &s.first_names,
            &s.surnames,
        )?)
    }

    pub fn factory(&self) -> LoggingFactory {
        LoggingFactory::new(boosted(&self.cfg().learners, self.cfg().seed))
    }
}

pub fn boosted(grid: &LearnerGrid, seed: u64) -> BoostedFactory {
    let mut f = BoostedFactory::new(grid.clone());
    f.settings.seed = derive_seed(seed, "learner-cv");
    f
}

pub struct Population {
    pub model: ExperienceModel,
    pub first: FirstNameSampler,
    pub last: SurnameSampler,
    pub selections: Vec<SelectionCount>,
}

pub fn fit_population(sources: &SourceBundle, factory: LoggingFactory) -> Result<Population> {
    let weights = density_ratio_weights(&sources.panel, &sources.pums, &factory)
        .context("density-ratio weights")?;
    let model =
        fit_experience_model(&sources.panel, &weights, &factory).context("experience model")?;
    Ok(Population {
        model,
        first: FirstNameSampler::new(&sources.first_names),
        last: SurnameSampler::new(&sources.surnames),
        selections: factory.selections(),
    })
}

pub fn draw(
    sources: &SourceBundle,
    pop: &Population,
    job: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<Profile>> {
    let s = derive_seed(seed, &format!("generate:{job}"));
    Ok(sample_profiles(
        job, n, sources, &pop.model, &pop.first, &pop.last, s,
    )?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateMeta {
    pub seed: u64,
    pub config_hash: String,
    pub counts: Vec<(String, usize)>,
    pub name_fallbacks: u64,
    pub experience_learners: Vec<SelectionCount>,
}

pub fn cmd_generate(run: &Run) -> Result<String> {
    let cfg = run.cfg();
    let sources = run.sources()?;
    let pop = fit_population(&sources, run.factory())?;
    let mut profiles = Vec::new();
    let mut counts = Vec::new();
    for o in &cfg.occupations {
        let p = draw(&sources, &pop, &o.name, o.count, cfg.seed)
            .with_context(|| format!("sampling {}", o.name))?;
        counts.push((o.name.clone(), p.len()));
        profiles.extend(p);
    }
    write_atomic(&run.path(PROFILES), |w| Ok(write_profiles(w, &profiles)?))?;
    write_json(
        &run.path(GENERATE_META),
        &GenerateMeta {
            seed: cfg.seed,
            config_hash: run.loaded.hash.clone(),
            counts,
            name_fallbacks: pop.first.fallbacks(),
            experience_learners: pop.selections,
        },
    )?;
    Ok(format!("generated {} profiles", profiles.len()))
}

pub fn load_profiles(run: &Run) -> Result<Vec<Profile>> {
    let path = run.path(PROFILES);
    read_profiles(BufReader::new(open_artifact(&path)?))
        .with_context(|| format!("reading {}", path.display()))
}

fn load_resumes(run: &Run) -> Result<Vec<ResumeRecord>> {
    let path = run.path(RESUMES);
    read_records(BufReader::new(open_artifact(&path)?))
        .with_context(|| format!("reading {}", path.display()))
}

fn load_scores(run: &Run) -> Result<Vec<ScoreRecord>> {
    let path = run.path(SCORES);
    read_score_records(BufReader::new(open_artifact(&path)?))
        .with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_render(run: &Run) -> Result<String> {
    let profiles = load_profiles(run)?;
    let pools = match &run.cfg().pools {
        Some(p) => ContentPools::load(p)?,
        None => ContentPools::builtin(),
    };
    let seed = derive_seed(run.cfg().seed, "render");
    let docs = render_corpus(&profiles, &pools, seed)?;
    let records: Vec<ResumeRecord> = docs.into_iter().map(|(_, r)| r).collect();
    write_atomic(&run.path(RESUMES), |w| Ok(write_records(w, &records)?))?;
    Ok(format!("rendered {} resumes", records.len()))
}

pub fn feature_context<'a>(
    cfg: &'a AuditConfig,
    sources: &'a SourceBundle,
    grouping: &'a GroupingConfig,
) -> FeatureContext<'a> {
    FeatureContext {
        contrast: cfg.contrast,
        first_names: &sources.first_names,
        surnames: &sources.surnames,
        grouping,
    }
}

pub fn features(ctx: &FeatureContext, profiles: &[Profile]) -> Result<Vec<ProfileFeatures>> {
    profiles
        .iter()
        .map(|p| {
            ctx.features(p)
                .with_context(|| format!("grouping profile {}", p.id))
        })
        .collect()
}

/// Synthetic scores; row `i` uses its own generator stream.
pub fn synthetic_scores(
    feats: &[ProfileFeatures],
    params: &SyntheticScorerParams,
    seed: u64,
) -> Result<Vec<f64>> {
    feats
        .iter()
        .enumerate()
        .map(|(i, f)| Ok(synthetic_score(f, params, &mut record_rng(seed, i as u64))?))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub scorer_id: String,
    pub jobs: usize,
    pub scored: usize,
    pub cache_hits: usize,
    pub requests: usize,
    pub retries: usize,
    pub failures: usize,
}

pub fn cmd_score(run: &Run) -> Result<String> {
    let cfg = run.cfg();
    let (records, meta) = match &cfg.scorer {
        ScorerConfig::Remote { endpoint, cache } => {
            let Some(endpoint) = endpoint else {
                bail!("configuration error: the remote scorer needs [scorer.endpoint] (base_url, model)");
            };
            endpoint.validate()?;
            let cache = match cache {
                Some(p) => ScoreCache::open(p)?,
                None => ScoreCache::in_memory(),
            };
            let resumes = load_resumes(run)?;
            let texts: HashMap<&str, String> = cfg
                .occupations
                .iter()
                .map(|o| (o.name.as_str(), o.job_text()))
                .collect();
            let jobs = resumes
                .iter()
                .map(|r| {
                    let job = texts.get(r.job.as_str()).ok_or_else(|| {
                        anyhow!(
                            "resume {} is for {}, which the config does not list",
                            r.profile_id,
                            r.job
                        )
                    })?;
                    Ok(ScoreJob {
                        resume_id: r.profile_id.clone(),
                        prompt: build_prompt(job, &r.text)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (records, s) = score_remote(&jobs, endpoint, &cache)?;
            let meta = ScoreMeta {
                scorer_id: endpoint.model.clone(),
                jobs: s.jobs,
                scored: s.jobs - s.failures,
                cache_hits: s.cache_hits,
                requests: s.requests,
                retries: s.retries,
                failures: s.failures,
            };
            (records, meta)
        }
        ScorerConfig::Synthetic { .. } => {
            let params = cfg.scorer.synthetic_params().expect("synthetic scorer");
            let resumes = load_resumes(run)?;
            let profiles = load_profiles(run)?;
            let by_id: HashMap<&str, &Profile> =
                profiles.iter().map(|p| (p.id.as_str(), p)).collect();
            let ordered = resumes
                .iter()
                .map(|r| {
                    by_id
                        .get(r.profile_id.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| anyhow!("resume {} has no matching profile", r.profile_id))
                })
                .collect::<Result<Vec<_>>>()?;
            let sources = run.sources()?;
            let ctx = feature_context(cfg, &sources, &cfg.grouping);
            let scores = synthetic_scores(
                &features(&ctx, &ordered)?,
                &params,
                derive_seed(cfg.seed, "score"),
            )?;
            let records: Vec<ScoreRecord> = ordered
                .iter()
                .zip(scores)
                .map(|(p, s)| ScoreRecord {
                    resume_id: p.id.clone(),
                    scorer_id: SYNTHETIC_ID.into(),
                    raw_response: None,
                    score: Some(s),
                    timestamp: 0,
                    retries: 0,
                    error: None,
                })
                .collect();
            let meta = ScoreMeta {
                scorer_id: SYNTHETIC_ID.into(),
                jobs: records.len(),
                scored: records.len(),
                cache_hits: 0,
                requests: 0,
                retries: 0,
                failures: 0,
            };
            (records, meta)
        }
    };
    write_atomic(&run.path(SCORES), |w| Ok(write_score_records(w, &records)?))?;
    let summary = format!(
        "scored {}/{} resumes ({} failures)",
        meta.scored, meta.jobs, meta.failures
    );
    write_json(&run.path(SCORE_META), &meta)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationEstimate {
    pub occupation: String,
    pub n_profiles: usize,
    pub n_scored: usize,
    pub report: EffectReport,
    pub learner_selections: Vec<SelectionCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub protected: String,
    pub x0: String,
    pub x1: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub corrupt: Option<Corruption>,
    pub occupations: Vec<OccupationEstimate>,
}

pub struct EstimateSeeds {
    pub crossfit: u64,
    pub bootstrap: u64,
}

impl EstimateSeeds {
    pub fn new(seed: u64, occupation: &str) -> Self {
        EstimateSeeds {
            crossfit: derive_seed(seed, &format!("crossfit:{occupation}")),
            bootstrap: derive_seed(seed, &format!("bootstrap:{occupation}")),
        }
    }
}

pub fn estimate_one(
    cfg: &AuditConfig,
    feats: &[ProfileFeatures],
    scores: &[f64],
    seeds: &EstimateSeeds,
    corrupt: Option<Corruption>,
) -> Result<(EffectReport, Vec<SelectionCount>)> {
    let table = audit_table(feats, scores, cfg.contrast)?;
    let factory = LoggingFactory::new(boosted(&cfg.learners, cfg.seed));
    let report = estimate_effects(
        &table,
        Learners::same(&factory),
        &CrossfitOptions {
            folds: cfg.estimation.folds,
            seed: seeds.crossfit,
            corrupt,
        },
        &BootstrapOptions {
            draws: cfg.estimation.bootstrap,
            level: cfg.estimation.level,
            seed: seeds.bootstrap,
        },
    )?;
    Ok((report, factory.selections()))
}

pub fn cmd_estimate(run: &Run, corrupt: Option<Corruption>) -> Result<String> {
    let cfg = run.cfg();
    let profiles = load_profiles(run)?;
    let scores = load_scores(run)?;
    let by_id: HashMap<&str, &ScoreRecord> =
        scores.iter().map(|s| (s.resume_id.as_str(), s)).collect();
    if by_id.len() != scores.len() {
        bail!("{} holds duplicate resume ids", SCORES);
    }
    let ids: HashSet<&str> = profiles.iter().map(|p| p.id.as_str()).collect();
    if let Some(orphan) = scores.iter().find(|s| !ids.contains(s.resume_id.as_str())) {
        bail!(
            "score for {} has no matching profile; stage outputs are out of sync",
            orphan.resume_id
        );
    }
    let sources = run.sources()?;
    let ctx = feature_context(cfg, &sources, &cfg.grouping);
    let mut out = Vec::new();
    for o in &cfg.occupations {
        let rows: Vec<&Profile> = profiles.iter().filter(|p| p.job == o.name).collect();
        if rows.is_empty() {
            bail!("no profiles for occupation {}", o.name);
        }
        let (scored, ys): (Vec<Profile>, Vec<f64>) = rows
            .iter()
            .filter_map(|p| {
                by_id
                    .get(p.id.as_str())
                    .and_then(|s| s.score)
                    .map(|y| ((*p).clone(), y))
            })
            .unzip();
        let share = scored.len() as f64 / rows.len() as f64;
        if share < cfg.estimation.completeness {
            bail!(
                "{}: only {} of {} profiles have a valid score ({:.1}%), below the completeness threshold of {:.1}%; rerun `score` or lower estimation.completeness",
                o.name,
                scored.len(),
                rows.len(),
                100.0 * share,
                100.0 * cfg.estimation.completeness
            );
        }
        let feats = features(&ctx, &scored)?;
        let (report, learner_selections) = estimate_one(
            cfg,
            &feats,
            &ys,
            &EstimateSeeds::new(cfg.seed, &o.name),
            corrupt,
        )
        .with_context(|| format!("estimating effects for {}", o.name))?;
        out.push(OccupationEstimate {
            occupation: o.name.clone(),
            n_profiles: rows.len(),
            n_scored: scored.len(),
            report,
            learner_selections,
        });
    }
    let (x0, x1) = cfg.contrast.levels();
    let estimates = Estimates {
        protected: cfg.contrast.protected_name().into(),
        x0: x0.into(),
        x1: x1.into(),
        config_hash: run.loaded.hash.clone(),
        seed: cfg.seed,
        version: audit_core::VERSION.into(),
        corrupt,
        occupations: out,
    };
    write_json(&run.path(ESTIMATES), &estimates)?;
    Ok(format!(
        "estimated effects for {} occupations",
        estimates.occupations.len()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRow {
    pub occupation: String,
    pub label: CaseLabel,
    pub display: String,
}

pub fn case_of(report: &EffectReport) -> Result<CaseLabel> {
    Ok(classify(&Effects::<CaseCell>::from(report))?)
}

pub fn cmd_classify(run: &Run) -> Result<String> {
    let est: Estimates = read_json(&run.path(ESTIMATES))?;
    let rows = est
        .occupations
        .iter()
        .map(|o| {
            let label = case_of(&o.report)?;
            Ok(CaseRow {
                occupation: o.occupation.clone(),
                display: label.to_string(),
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&run.path(CASES), &rows)?;
    Ok(format!("classified {} occupations", rows.len()))
}
