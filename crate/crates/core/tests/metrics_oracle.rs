mod support;

use occdiff_core::evalkit::{cd_l1, cd_l2, evaluate_run, f_score, EvalConfig};
use occdiff_core::geometry::obj::write_obj;
use occdiff_core::synthbuild::{build_dataset, BuildConfig, Dataset};
use occdiff_core::{seeded_rng, Point3};
use proptest::prelude::*;
use rand::Rng;
use support::{brute_cd_l1, brute_cd_l2, brute_f_score};

fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect()
}

#[test]
fn metrics_match_brute_force_on_fifty_pairs() {
    let mut rng = seeded_rng(31);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=500), rng.random_range(1..=500));
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, m));
        let d = rng.random_range(0.01..0.1);
        assert!((cd_l1(&a, &b).unwrap() - brute_cd_l1(&a, &b)).abs() <= 1e-6);
        assert!((cd_l2(&a, &b).unwrap() - brute_cd_l2(&a, &b)).abs() <= 1e-6);
        assert!((f_score(&a, &b, d).unwrap().f - brute_f_score(&a, &b, d)).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_and_shuffling_inputs(seed in 0u64..10_000, n in 1usize..120, m in 1usize..120) {
        let mut rng = seeded_rng(seed);
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, m));
        prop_assert!((cd_l1(&a, &b).unwrap() - cd_l1(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((cd_l2(&a, &b).unwrap() - cd_l2(&b, &a).unwrap()).abs() < 1e-12);
        let ab = f_score(&a, &b, 0.05).unwrap();
        let ba = f_score(&b, &a, 0.05).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((ab.f - ba.f).abs() < 1e-12);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert!((cd_l2(&rev, &b).unwrap() - cd_l2(&a, &b).unwrap()).abs() < 1e-12);
    }
}

fn small_dataset(dir: &std::path::Path, count: usize) -> Dataset {
    let cfg = BuildConfig { count, seed: 5, ..Default::default() };
    build_dataset(&cfg, dir).unwrap();
    Dataset::open(dir).unwrap()
}

#[test]
fn ground_truth_copies_score_perfectly_and_missing_rows_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(&tmp.path().join("data"), 10);
    let preds = tmp.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    for r in data.records.iter().skip(1) {
        write_obj(&data.load_mesh(r).unwrap(), &preds.join(format!("{}.obj", r.id))).unwrap();
    }
    let recs: Vec<_> = data.records.iter().collect();
    // Independent samples of the same surface leave a CD-L2 floor of about
    // 2·area/(π·n); 65536 samples push it below 0.05 (x1e-3) for these shapes.
    let cfg = EvalConfig { samples: 65_536, ..Default::default() };
    let report = evaluate_run(&preds, &data, &recs, &cfg);
    assert_eq!(report.aggregate.count, 9);
    assert_eq!(report.aggregate.failures, 1);
    assert_eq!(report.failures[0].id, data.records[0].id);
    assert!(report.aggregate.cd_l2_e3 <= 0.05, "{}", report.aggregate.cd_l2_e3);
    assert!(report.aggregate.f_score >= 0.99, "{}", report.aggregate.f_score);

    let table = report.table();
    let header = table.lines().next().unwrap();
    let (l2, l1, f) = (header.find("CD_L2").unwrap(), header.find("CD_L1").unwrap(), header.find("F-Score").unwrap());
    assert!(l2 < l1 && l1 < f);
    let jsonl = report.to_jsonl().unwrap();
    assert_eq!(jsonl.lines().count(), 9 + 1 + 1);
    assert!(jsonl.lines().last().unwrap().contains("summary"));
}
