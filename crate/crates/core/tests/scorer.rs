mod common;

use audit_core::audit::{Contrast, FeatureContext};
use audit_core::estimands::Effect;
use audit_core::learners::{BoostedFactory, LearnerGrid};
use audit_core::popgen::fixtures::synthetic_sources;
use audit_core::popgen::*;
use audit_core::scorer::*;
use audit_core::sfm::grouping::GroupingConfig;
use audit_core::Error;
use common::mock::{completion, MockServer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn prompt_matches_golden_file() {
    let golden = include_str!("fixtures/prompt_golden.txt");
    assert_eq!(build_prompt("J", "R").unwrap(), golden);
}

#[test]
fn parse_corpus() {
    let text = include_str!("fixtures/score_responses.jsonl");
    let mut n = 0;
    for line in text.lines() {
        let case: serde_json::Value = serde_json::from_str(line).unwrap();
        let response = case["response"].as_str().unwrap();
        let got = parse_score(response);
        match &case["expect"] {
            serde_json::Value::Number(v) => {
                let v = v.as_f64().unwrap();
                assert_eq!(got.unwrap(), v, "{response:?}");
            }
            serde_json::Value::String(kind) if kind == "range" => {
                assert!(matches!(got, Err(Error::Range(_))), "{response:?}: {got:?}")
            }
            _ => assert!(matches!(got, Err(Error::Parse(_))), "{response:?}: {got:?}"),
        }
        n += 1;
    }
    assert_eq!(n, 50);
}

fn jobs(n: usize) -> Vec<ScoreJob> {
    (0..n)
        .map(|i| ScoreJob {
            resume_id: format!("r{i:03}"),
            prompt: build_prompt("Job", &format!("Resume {i}")).unwrap(),
        })
        .collect()
}

fn score_of(prompt: &str) -> f64 {
    let i: f64 = prompt.rsplit(' ').next().unwrap().parse().unwrap();
    (i * 0.7) % 100.0
}

#[test]
fn cached_resumes_are_not_requested() {
    let server = MockServer::start(Box::new(|p, _| {
        (200, completion(&format!("{{\"score\": {}}}", score_of(p))))
    }));
    let cfg = server.config();
    let cache = ScoreCache::in_memory();
    let all = jobs(100);
    for j in &all[..40] {
        cache
            .insert(CacheEntry {
                key: cache_key(&cfg.model, &j.prompt),
                scorer_id: cfg.model.clone(),
                raw_response: "{\"score\": 1}".into(),
                score: 1.0,
                timestamp: 0,
            })
            .unwrap();
    }
    let (records, summary) = score_remote(&all, &cfg, &cache).unwrap();
    assert_eq!(server.requests(), 60);
    assert_eq!(summary.requests, 60);
    assert_eq!(summary.cache_hits, 40);
    assert_eq!(summary.failures, 0);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.resume_id, all[i].resume_id);
        let want = if i < 40 {
            1.0
        } else {
            score_of(&all[i].prompt)
        };
        assert_eq!(r.score, Some(want));
    }
}

#[test]
fn malformed_then_valid_is_retried_once() {
    let server = MockServer::start(Box::new(|_, count| {
        let content = if count == 0 {
            "I think about 80"
        } else {
            "{\"score\": 80}"
        };
        (200, completion(content))
    }));
    let (records, summary) =
        score_remote(&jobs(3), &server.config(), &ScoreCache::in_memory()).unwrap();
    assert!(records
        .iter()
        .all(|r| r.score == Some(80.0) && r.retries == 1));
    assert_eq!(summary.retries, 3);
    assert_eq!(server.requests(), 6);
}

#[test]
fn server_errors_exhaust_retries_and_are_not_cached() {
    let server = MockServer::start(Box::new(|_, _| (500, "{}".into())));
    let cfg = EndpointConfig {
        max_retries: 2,
        ..server.config()
    };
    let cache = ScoreCache::in_memory();
    let (records, summary) = score_remote(&jobs(4), &cfg, &cache).unwrap();
    assert_eq!(summary.failures, 4);
    assert_eq!(server.requests(), 12);
    assert!(records.iter().all(|r| r.score.is_none()
        && r.retries == 2
        && r.error.as_deref().unwrap().contains("500")));
    assert!(cache.is_empty());
}

#[test]
fn out_of_range_is_final() {
    let server = MockServer::start(Box::new(|_, _| (200, completion("{\"score\": 140}"))));
    let (records, summary) =
        score_remote(&jobs(2), &server.config(), &ScoreCache::in_memory()).unwrap();
    assert_eq!(server.requests(), 2);
    assert_eq!(summary.failures, 2);
    assert!(records
        .iter()
        .all(|r| r.retries == 0 && r.raw_response.as_deref() == Some("{\"score\": 140}")));
}

#[test]
fn rerun_against_persisted_cache_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    let server = MockServer::start(Box::new(|p, _| {
        (200, completion(&format!("{{\"score\": {}}}", score_of(p))))
    }));
    let cfg = server.config();
    let all = jobs(25);
    let first = score_remote(&all, &cfg, &ScoreCache::open(&path).unwrap())
        .unwrap()
        .0;
    assert_eq!(server.requests(), 25);
    let cache = ScoreCache::open(&path).unwrap();
    let (second, summary) = score_remote(&all, &cfg, &cache).unwrap();
    assert_eq!(server.requests(), 25);
    assert_eq!(summary.cache_hits, 25);
    let scores = |rs: &[ScoreRecord]| rs.iter().map(|r| r.score).collect::<Vec<_>>();
    assert_eq!(scores(&first), scores(&second));
}

#[test]
fn uncached_work_without_endpoint_is_a_config_error() {
    let cfg = EndpointConfig::new("", "m");
    let err = score_remote(&jobs(1), &cfg, &ScoreCache::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

struct Induced {
    sources: SourceBundle,
    model: ExperienceModel,
    first: FirstNameSampler,
    last: SurnameSampler,
    grouping: GroupingConfig,
}

const JOB: &str = "Software Developers";

fn induced_world() -> Induced {
    let sources = synthetic_sources(&[JOB], 20_000, 1_500, 5).unwrap();
    let factory = BoostedFactory::new(LearnerGrid::single(30, 3, 1.0));
    let weights = density_ratio_weights(&sources.panel, &sources.pums, &factory).unwrap();
    let model = fit_experience_model(&sources.panel, &weights, &factory).unwrap();
    let first = FirstNameSampler::new(&sources.first_names);
    let last = SurnameSampler::new(&sources.surnames);
    Induced {
        sources,
        model,
        first,
        last,
        grouping: GroupingConfig::default(),
    }
}

impl Induced {
    fn ctx(&self, contrast: Contrast) -> FeatureContext<'_> {
        FeatureContext {
            contrast,
            first_names: &self.sources.first_names,
            surnames: &self.sources.surnames,
            grouping: &self.grouping,
        }
    }

    fn effects(
        &self,
        params: &SyntheticScorerParams,
        contrast: Contrast,
    ) -> audit_core::estimands::EffectSet {
        let rows = build_p1_sampler(&self.sources.pums, JOB).unwrap();
        let scm = induced_scm(
            params,
            &self.ctx(contrast),
            rows.rows(),
            &self.model,
            &self.first,
            &self.last,
        )
        .unwrap();
        synthetic_oracle_effects(&scm).unwrap()
    }
}

#[test]
fn induced_model_structure() {
    let w = induced_world();
    for contrast in [Contrast::Gender, Contrast::Race] {
        let zero = w.effects(&SyntheticScorerParams::structural_zero(), contrast);
        for e in Effect::ALL {
            assert!(zero.get(e).abs() < 1e-9, "{contrast}: {zero:?}");
        }

        let no_x = SyntheticScorerParams {
            x: 0.0,
            x_by_edu_band: [0.0; 3],
            ..SyntheticScorerParams::generic()
        };
        let mediated = w.effects(&no_x, contrast);
        assert!(mediated.nde.abs() < 1e-9, "{contrast}: {mediated:?}");
        assert!(mediated.nie.abs() > 1e-3, "{contrast}: {mediated:?}");

        let shift = w.effects(&SyntheticScorerParams::x_only(7.5), contrast);
        assert!((shift.te - 7.5).abs() < 1e-6, "{contrast}: {shift:?}");
        assert!((shift.nde - 7.5).abs() < 1e-6, "{contrast}: {shift:?}");
        assert!(shift.nie.abs() < 1e-6);

        let g = w.effects(&SyntheticScorerParams::generic(), contrast);
        assert!((g.te - (g.nde + g.nie)).abs() < 1e-12);
        assert!((g.nie - (g.bie + g.rie)).abs() < 1e-12);
        for e in Effect::ALL {
            assert!(g.get(e).is_finite());
        }
    }
}

#[test]
fn induced_model_matches_sampled_scores() {
    let w = induced_world();
    let params = SyntheticScorerParams::generic();
    let ctx = w.ctx(Contrast::Gender);
    let rows = build_p1_sampler(&w.sources.pums, JOB).unwrap();
    let scm = induced_scm(&params, &ctx, rows.rows(), &w.model, &w.first, &w.last).unwrap();
    let profiles =
        sample_profiles(JOB, 40_000, &w.sources, &w.model, &w.first, &w.last, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sums = [(0.0, 0.0); 2];
    for p in &profiles {
        let f = ctx.features(p).unwrap();
        let y = synthetic_score(&f, &params, &mut rng).unwrap();
        let arm = &mut sums[usize::from(f.is_x1)];
        arm.0 += y;
        arm.1 += 1.0;
    }
    for x in 0..2 {
        let mut num = 0.0;
        let mut den = 0.0;
        for z in 0..scm.nz() {
            for r in 0..scm.nr() {
                for b in 0..scm.nb() {
                    let p = scm.joint(x, z, r, b);
                    num += p * scm.y_mean[x][z][r][b];
                    den += p;
                }
            }
        }
        let (s, n) = sums[x];
        let empirical = s / n;
        assert!(
            (num / den - empirical).abs() < 0.5,
            "arm {x}: {} vs {empirical}",
            num / den
        );
    }
}
