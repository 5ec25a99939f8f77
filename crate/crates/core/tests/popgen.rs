mod common;

use std::collections::HashMap;

use audit_core::learners::{BoostedFactory, LearnerGrid};
use audit_core::popgen::fixtures::OCCUPATIONS;
use audit_core::popgen::*;
use audit_core::sfm::grouping::{Cohort, EduLevel, Gender, Race};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{small_factory, World};

const NURSES: &str = OCCUPATIONS[0].0;

fn searched_factory() -> BoostedFactory {
    BoostedFactory::new(LearnerGrid::default())
}

fn world() -> World {
    World::new()
}

fn draw(w: &World, job: &str, n: usize, seed: u64) -> Vec<Profile> {
    w.draw(job, n, seed)
}

fn total_variation<K: std::hash::Hash + Eq>(a: &HashMap<K, f64>, b: &HashMap<K, f64>) -> f64 {
    let keys: std::collections::HashSet<&K> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

fn freq<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> HashMap<K, f64> {
    let mut m: HashMap<K, f64> = HashMap::new();
    let mut n = 0.0;
    for k in keys {
        *m.entry(k).or_default() += 1.0;
        n += 1.0;
    }
    m.values_mut().for_each(|v| *v /= n);
    m
}

#[test]
fn support_holds_over_a_million_draws() {
    let w = world();
    let mut violations = 0;
    for (i, (job, _)) in OCCUPATIONS.iter().enumerate() {
        for p in draw(&w, job, 200_000, 100 + i as u64) {
            if !(MIN_AGE..=MAX_AGE).contains(&p.age)
                || !(0.0..=f64::from(p.age - MIN_AGE)).contains(&p.exp_year)
            {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn categorical_marginals_match_the_eligible_rows() {
    let w = world();
    let p1 = build_p1_sampler(&w.sources.pums, NURSES).unwrap();
    let profiles = draw(&w, NURSES, 100_000, 5);
    let tv = [
        total_variation(
            &freq(profiles.iter().map(|p| p.gender.label())),
            &freq(p1.rows().iter().map(|r| r.gender.label())),
        ),
        total_variation(
            &freq(profiles.iter().map(|p| p.race.label())),
            &freq(p1.rows().iter().map(|r| r.race.label())),
        ),
        total_variation(
            &freq(profiles.iter().map(|p| p.state.clone())),
            &freq(p1.rows().iter().map(|r| r.state.clone())),
        ),
        total_variation(
            &freq(profiles.iter().map(|p| p.edu_level.label())),
            &freq(p1.rows().iter().map(|r| r.edu_level.label())),
        ),
    ];
    for t in tv {
        assert!(t <= 0.01, "tv {tv:?}");
    }
}

#[test]
fn seed_determinism_and_empty_request() {
    let w = world();
    let a = draw(&w, OCCUPATIONS[2].0, 500, 9);
    assert_eq!(a, draw(&w, OCCUPATIONS[2].0, 500, 9));
    assert_ne!(a, draw(&w, OCCUPATIONS[2].0, 500, 10));
    assert!(draw(&w, NURSES, 0, 9).is_empty());
}

#[test]
fn corpus_totals_follow_the_occupation_counts() {
    let w = world();
    let mut total = 0;
    for (i, (job, n)) in OCCUPATIONS.iter().enumerate() {
        let ps = draw(&w, job, *n, i as u64);
        assert_eq!(ps.len(), *n);
        assert!(ps.iter().all(|p| p.job == *job));
        total += ps.len();
    }
    assert_eq!(total, 60_884);
}

#[test]
fn truncated_moments_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (mean, sd, hi) in [(5.0, 2.0, 10.0), (1.0, 3.0, 4.0), (12.0, 4.0, 8.0)] {
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(mean, sd, 0.0, hi, &mut rng))
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let (em, ev) = truncated_normal_moments(mean, sd, 0.0, hi);
        assert!((m - em).abs() <= 0.01 * em, "mean {m} vs {em}");
        assert!((v - ev).abs() <= 0.01 * ev * 2.0, "var {v} vs {ev}");
        if (mean, sd, hi) == (5.0, 2.0, 10.0) {
            assert!((m - em).abs() < 0.05);
        }
    }
}

#[test]
fn first_names_are_independent_of_race_within_a_cell() {
    let w = world();
    let profiles = draw(&w, NURSES, 100_000, 77);
    let cell: Vec<&Profile> = profiles
        .iter()
        .filter(|p| p.gender == Gender::Female && Cohort::from_age(p.age) == Cohort::Mid)
        .collect();
    let names: Vec<&str> = {
        let mut v: Vec<&str> = cell.iter().map(|p| p.first_name.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut table = vec![[0.0f64; 4]; names.len()];
    for p in &cell {
        let i = names.binary_search(&p.first_name.as_str()).unwrap();
        table[i][p.race.code() as usize] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for j in 0..4 {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                stat += (r[j] - e).powi(2) / e;
            }
        }
    }
    let df = ((names.len() - 1) * 3) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat} on {df} df, p = {p}");
}

fn panel_row(rng: &mut ChaCha8Rng, edu_high: bool) -> PanelRow {
    PanelRow {
        gender: if rng.random() {
            Gender::Female
        } else {
            Gender::Male
        },
        race: Race::ALL[rng.random_range(0..4)],
        age: rng.random_range(MIN_AGE..=MAX_AGE),
        state: "TX".into(),
        edu_level: if edu_high {
            EduLevel::Master
        } else {
            EduLevel::Bachelor
        },
        occupation: "Accountants and Auditors".into(),
        exp_year: 1.0,
    }
}

fn as_pums(r: &PanelRow) -> PumsRow {
    PumsRow {
        gender: r.gender,
        race: r.race,
        age: r.age,
        state: r.state.clone(),
        edu_level: r.edu_level,
        occupation: r.occupation.clone(),
        employed: true,
    }
}

#[test]
fn self_matched_sources_give_flat_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let panel: Vec<PanelRow> = (0..10_000)
        .map(|i| panel_row(&mut rng, i % 2 == 0))
        .collect();
    let pums: Vec<PumsRow> = (0..10_000)
        .map(|i| as_pums(&panel_row(&mut rng, i % 2 == 0)))
        .collect();
    let w = density_ratio_weights(&panel, &pums, &searched_factory()).unwrap();
    let (lo, hi) = w
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
    assert!(lo >= 0.8 && hi <= 1.25, "weights in [{lo}, {hi}]");
}

#[test]
fn shifted_education_is_reweighted_three_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let panel: Vec<PanelRow> = (0..10_000)
        .map(|i| panel_row(&mut rng, i % 2 == 0))
        .collect();
    let pums: Vec<PumsRow> = (0..10_000)
        .map(|i| as_pums(&panel_row(&mut rng, i % 4 != 0)))
        .collect();
    let w = density_ratio_weights(&panel, &pums, &searched_factory()).unwrap();
    let mean = |high: bool| {
        let v: Vec<f64> = panel
            .iter()
            .zip(&w)
            .filter(|(r, _)| (r.edu_level == EduLevel::Master) == high)
            .map(|(_, w)| *w)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ratio = mean(true) / mean(false);
    assert!((ratio / 3.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
}

#[test]
fn extreme_shift_is_clipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut panel: Vec<PanelRow> = (0..2000).map(|_| panel_row(&mut rng, false)).collect();
    panel.extend((0..5).map(|_| panel_row(&mut rng, true)));
    let pums: Vec<PumsRow> = (0..2000)
        .map(|_| as_pums(&panel_row(&mut rng, true)))
        .collect();
    let w = density_ratio_weights(&panel, &pums, &small_factory()).unwrap();
    assert!(w
        .iter()
        .all(|x| (WEIGHT_CLIP.0..=WEIGHT_CLIP.1).contains(x)));
    assert!(density_ratio_weights(&panel, &[], &small_factory()).is_err());
}

#[test]
fn experience_slope_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows: Vec<PanelRow> = (0..6000).map(|_| panel_row(&mut rng, false)).collect();
    for r in &mut rows {
        r.exp_year = 0.5 * f64::from(r.age - MIN_AGE) + noise.sample(&mut rng);
    }
    let (train, test) = rows.split_at(4000);
    let model = fit_experience_model(train, &vec![1.0; train.len()], &small_factory()).unwrap();
    let pred = model.mean(test).unwrap();
    let ages: Vec<f64> = test.iter().map(|r| f64::from(r.age)).collect();
    let (ma, mp) = (
        ages.iter().sum::<f64>() / ages.len() as f64,
        pred.iter().sum::<f64>() / pred.len() as f64,
    );
    let cov: f64 = ages
        .iter()
        .zip(&pred)
        .map(|(a, p)| (a - ma) * (p - mp))
        .sum();
    let var: f64 = ages.iter().map(|a| (a - ma).powi(2)).sum();
    let slope = cov / var;
    assert!((slope / 0.5 - 1.0).abs() <= 0.15, "slope {slope}");
}

#[test]
fn sigma_fallbacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<PanelRow> = (0..200)
        .map(|_| {
            let mut r = panel_row(&mut rng, false);
            r.exp_year = rng.random::<f64>();
            r
        })
        .collect();
    let model = fit_experience_model(&rows, &vec![1.0; rows.len()], &small_factory()).unwrap();
    let (s, level) = model.sigma(30, Gender::Male, "Unseen");
    assert_eq!(level, SigmaLevel::Global);
    let pred = model.mean(&rows).unwrap();
    let r: Vec<f64> = rows
        .iter()
        .zip(&pred)
        .map(|(r, p)| r.exp_year - p)
        .collect();
    let m = r.iter().sum::<f64>() / r.len() as f64;
    let sd = (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    assert!((s - sd).abs() < 1e-9);
    assert!(fit_experience_model(&[], &[], &small_factory()).is_err());
}

#[test]
fn experience_draws_respect_support() {
    let w = world();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = draw(&w, NURSES, 1, 1).remove(0);
    p.age = 18;
    for _ in 0..100 {
        assert_eq!(sample_experience(&p, &w.model, &mut rng).unwrap(), 0.0);
    }
    p.age = 17;
    assert!(sample_experience(&p, &w.model, &mut rng).is_err());
}

#[test]
fn qq_pairs_for_normal_and_heavy_tails() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let worst = qq_pairs(&xs)
        .unwrap()
        .iter()
        .map(|(t, e)| (t - e).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.08, "normal deviation {worst}");

    let t = StudentT::new(2.0).unwrap();
    let ys: Vec<f64> = (0..10_000).map(|_| t.sample(&mut rng)).collect();
    let pairs = qq_pairs(&ys).unwrap();
    let tail = pairs
        .iter()
        .filter(|(t, _)| t.abs() > 2.0)
        .map(|(t, e)| (t - e).abs())
        .fold(0.0, f64::max);
    assert!(tail > 0.2, "heavy-tail deviation {tail}");
    assert!(qq_pairs(&xs[..5]).is_err());
}

#[test]
fn panel_residuals_produce_plot_pairs() {
    let w = world();
    let pairs = qq_residuals(&w.sources.panel, &w.model).unwrap();
    assert_eq!(pairs.len(), 99);
    assert!(pairs
        .windows(2)
        .all(|p| p[0].0 < p[1].0 && p[0].1 <= p[1].1));
}
