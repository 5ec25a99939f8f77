mod common;

use std::collections::HashSet;

use audit_core::popgen::Profile;
use audit_core::resume::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::minimality::{allowed, changed, flip, FIELDS};
use common::World;

fn name_lists(w: &World) -> (Vec<String>, Vec<String>) {
    let mut first: Vec<String> = w
        .sources
        .first_names
        .records()
        .iter()
        .map(|r| r.name.clone())
        .collect();
    first.sort();
    first.dedup();
    let last = w
        .sources
        .surnames
        .records()
        .iter()
        .map(|r| r.surname.clone())
        .collect();
    (first, last)
}

#[test]
fn single_field_flips_touch_only_derived_spans() {
    let w = World::new();
    let pools = ContentPools::builtin();
    let (first, last) = name_lists(&w);
    let base: Vec<Profile> = w.corpus(3).into_iter().step_by(60).take(1000).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pairs = 0;
    for (i, p) in base.iter().enumerate() {
        let field = FIELDS[i % FIELDS.len()];
        let Some(q) = flip(p, field, &first, &last, &mut rng) else {
            continue;
        };
        let a = render_resume(p, &pools, 5).unwrap().text;
        let b = render_resume(&q, &pools, 5).unwrap().text;
        let diff = changed(&a, &b);
        assert!(
            diff.is_subset(&allowed(field)),
            "{field:?} changed {diff:?}\n{a}\n---\n{b}"
        );
        pairs += 1;
    }
    assert!(pairs >= 990, "{pairs} pairs");
}

#[test]
fn corpus_timelines_pools_and_emails() {
    let w = World::new();
    let pools = ContentPools::builtin();
    let profiles = w.corpus(1);
    assert_eq!(profiles.len(), 60_884);
    let docs = render_corpus(&profiles, &pools, 9).unwrap();
    let mut emails = HashSet::new();
    for (p, (doc, rec)) in profiles.iter().zip(&docs) {
        doc.check_timeline()
            .unwrap_or_else(|e| panic!("{}: {e}", p.id));
        assert!(emails.insert(doc.contact.email.clone()));
        let job = pools.job(&p.job).unwrap();
        for r in &doc.work {
            assert!(job.companies.contains(&r.company));
            assert!(job.titles.get(r.seniority).contains(&r.title));
            assert!(r
                .bullets
                .iter()
                .all(|b| job.bullets.get(r.seniority).contains(b)));
        }
        assert!(doc.skills.iter().all(|s| job.skills.contains(s)));
        let s = &pools.schools;
        for e in &doc.education {
            assert!([&s.high_school, &s.college, &s.university, &s.graduate]
                .iter()
                .any(|pool| pool.contains(&e.school)));
        }
        assert_eq!(rec.profile_id, p.id);
    }
}

#[test]
fn rendering_is_deterministic_and_section_order_fixed() {
    let w = World::new();
    let pools = ContentPools::builtin();
    for p in w.draw("Software Developers", 50, 2) {
        let a = render_resume(&p, &pools, 4).unwrap();
        assert_eq!(a, render_resume(&p, &pools, 4).unwrap());
        let pos: Vec<usize> = SECTION_HEADINGS
            .iter()
            .map(|h| a.text.find(h).unwrap())
            .collect();
        assert!(pos.windows(2).all(|x| x[0] < x[1]));
    }
}

#[test]
fn same_name_profiles_get_distinct_emails() {
    let w = World::new();
    let pools = ContentPools::builtin();
    let mut ps = w.draw("Registered Nurses", 2000, 8);
    for p in &mut ps {
        p.first_name = "Ana".into();
        p.surname = "Diaz".into();
    }
    let docs = render_corpus(&ps, &pools, 1).unwrap();
    let emails: HashSet<&str> = docs.iter().map(|(d, _)| d.contact.email.as_str()).collect();
    assert_eq!(emails.len(), ps.len());
    assert!(emails.iter().all(|e| e.starts_with("ana.diaz")));
}

#[test]
fn records_round_trip() {
    let w = World::new();
    let pools = ContentPools::builtin();
    let recs: Vec<ResumeRecord> = w
        .draw("Construction Laborers", 20, 1)
        .iter()
        .map(|p| render_resume(p, &pools, 3).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).unwrap();
    assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
}
