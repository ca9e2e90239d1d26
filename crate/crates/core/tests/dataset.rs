use std::time::Instant;

use eit_manifold::dataset::{build_dataset, DatasetConfig, Dataset, Split, Splits};
use eit_manifold::phantom::Family;
use eit_manifold::workbench::{Workbench, WorkbenchConfig};

fn small_bench() -> Workbench {
    let mut cfg = WorkbenchConfig::default();
    cfg.mesh.target_elements = 1200;
    Workbench::build(cfg).unwrap()
}

fn config(n_base: usize, n_noise: usize, noise_level: f64) -> DatasetConfig {
    DatasetConfig {
        n_base,
        n_noise,
        noise_level,
        seed: 11,
        family: Family::Mixed,
    }
}

#[test]
fn counts_normalization_and_regeneration() {
    let wb = small_bench();
    let t = Instant::now();
    let ds = build_dataset(&wb, &config(12, 3, 0.05)).unwrap();
    eprintln!("12 bases in {:?}", t.elapsed());
    assert_eq!(ds.len(), 36);
    assert_eq!(ds.frames().len(), 36 * 208);
    assert_eq!(ds.images().len(), 12 * 32 * 32);
    assert!(ds.images().iter().all(|v| v.abs() <= 1.0));
    let oracle = ds
        .phantoms()
        .iter()
        .flat_map(|p| eit_manifold::phantom::render(p, wb.mesh()))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(ds.c_norm(), oracle);
    assert!(ds.regeneration_mismatches(&wb, &(0..36).collect::<Vec<_>>()).unwrap().is_empty());

    let again = build_dataset(&wb, &config(12, 3, 0.05)).unwrap();
    assert_eq!(again.hash(), ds.hash());
    assert!(again.frames().iter().zip(ds.frames()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let base = ds.frame(0);
    assert!(base.iter().zip(ds.frame(1)).any(|(a, b)| a != b), "replicates share noise");
}

#[test]
fn noiseless_single_replicate_equals_clean_simulation() {
    let wb = small_bench();
    let ds = build_dataset(&wb, &config(4, 1, 0.0)).unwrap();
    for b in 0..4 {
        let gd = eit_manifold::phantom::render(&ds.phantoms()[b], wb.mesh());
        let clean = wb.simulate_filtered(&gd).unwrap();
        let stored = ds.frame(b);
        assert!(clean.values().iter().zip(stored).all(|(a, s)| (*a as f32).to_bits() == s.to_bits()));
    }
}

#[test]
fn round_trip_and_tamper_detection() {
    let wb = small_bench();
    let ds = build_dataset(&wb, &config(5, 2, 0.05)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.manifest(), ds.manifest());
    assert_eq!(back.splits(), ds.splits());
    assert_eq!(back.hash(), ds.hash());
    let mut frames = std::fs::read(dir.path().join("frames.f32")).unwrap();
    frames[0] ^= 1;
    std::fs::write(dir.path().join("frames.f32"), frames).unwrap();
    assert!(Dataset::load(dir.path()).is_err());
}

#[test]
fn splits_partition_base_indices() {
    for n in [1usize, 2, 5, 10, 200, 2136] {
        let s = Splits::contiguous(n);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert!(!s.train.is_empty());
    }
    let s = Splits::contiguous(200);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (160, 20, 20));
    let wb = small_bench();
    let ds = build_dataset(&wb, &config(10, 2, 0.05)).unwrap();
    assert_eq!(ds.pairs_in(Split::Test), vec![18, 19]);
}

#[test]
fn invalid_counts_are_rejected() {
    let wb = small_bench();
    assert!(build_dataset(&wb, &config(0, 10, 0.05)).is_err());
    assert!(build_dataset(&wb, &config(10, 0, 0.05)).is_err());
    assert!(build_dataset(&wb, &config(10, 1, -0.1)).is_err());
}

#[test]
fn paper_scale_pair_count() {
    let cfg = DatasetConfig { n_base: 2136, n_noise: 10, ..DatasetConfig::default() };
    assert_eq!(cfg.pairs(), 21360);
}
