use occdiff_core::geometry::{occupancy_query, Aabb};
use occdiff_core::synthbuild::format::sha256_hex;
use occdiff_core::synthbuild::{build_dataset, BuildConfig, Dataset, Split, MANIFEST};

fn checksums(root: &std::path::Path, records: &[occdiff_core::synthbuild::DatasetRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        let mut files = vec![r.mesh.clone(), r.occupancy.clone(), r.surface.clone()];
        files.extend(r.clouds.iter().cloned());
        for f in files {
            out.push(sha256_hex(&std::fs::read(root.join(f)).unwrap()));
        }
    }
    out
}

#[test]
fn builds_are_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BuildConfig { count: 12, seed: 77, ..Default::default() };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = build_dataset(&cfg, &a).unwrap();
    let rb = build_dataset(&cfg, &b).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(std::fs::read(a.join(MANIFEST)).unwrap(), std::fs::read(b.join(MANIFEST)).unwrap());
    assert_eq!(checksums(&a, &ra), checksums(&b, &rb));
    assert_eq!(std::fs::read_to_string(a.join(MANIFEST)).unwrap().lines().count(), 12);
}

#[test]
fn stored_records_round_trip_and_clouds_stay_in_the_box() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BuildConfig { count: 10, seed: 3, ..Default::default() };
    build_dataset(&cfg, tmp.path()).unwrap();
    let data = Dataset::open(tmp.path()).unwrap();
    data.verify().unwrap();
    let margin = 3.0 * cfg.sensor.noise_sigma;
    for r in &data.records {
        let mesh = data.load_mesh(r).unwrap();
        assert!(mesh.is_watertight());
        let occ = data.load_occupancy(r).unwrap();
        assert_eq!(occ.len(), 1000);
        assert_eq!(occupancy_query(&mesh, &occ.positions).unwrap(), occ.values);
        let cloud = data.load_cloud(r, 0).unwrap();
        assert!(cloud.len() >= cfg.sensor.min_points);
        assert!(cloud.points.iter().all(|p| Aabb::unit().contains(p, margin)));
    }
}

#[test]
fn default_split_partitions_one_hundred_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BuildConfig { count: 100, seed: 1, surface_points: 64, ..Default::default() };
    let recs = build_dataset(&cfg, tmp.path()).unwrap();
    let count = |s: Split| recs.iter().filter(|r| r.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (80, 10, 10));
}
