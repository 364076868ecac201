mod common;

use std::collections::{BTreeMap, HashSet};

use leakage_audit::embedding_store::{
    fuse_flip, l2_normalize, load_embeddings, save_embeddings, validate_manifest, DatasetManifest, EmbeddingSet,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Norm by pairwise (tree) summation, independent of the library's loop.
fn tree_norm(row: &[f64]) -> f64 {
    fn sum(v: &[f64]) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0] * v[0],
            n => sum(&v[..n / 2]) + sum(&v[n / 2..]),
        }
    }
    sum(row).sqrt()
}

#[test]
fn random_matrix_normalizes_to_unit_rows() {
    let mut rng = common::rng(11);
    let raw = common::raw_set(&mut rng, "r", 100, 16);
    let scaled = raw.scaled(7.5);
    let n = l2_normalize(&scaled).unwrap();
    for i in 0..n.len() {
        assert!((tree_norm(n.row(i)) - 1.0).abs() < 1e-6, "row {i}");
    }
    assert_eq!(n.image_ids(), raw.image_ids());
    assert_eq!(n.labels(), raw.labels());
}

#[test]
fn normalize_is_idempotent() {
    let mut rng = common::rng(12);
    let once = common::unit_set(&mut rng, "r", 200, 64);
    let twice = l2_normalize(&once).unwrap();
    for (a, b) in once.vectors().iter().zip(twice.vectors()) {
        assert!((a - b).abs() <= 1e-7);
    }
}

#[test]
fn fuse_matches_direct_recomputation() {
    let mut rng = common::rng(13);
    let a = common::unit_set(&mut rng, "x", 80, 32);
    let b_raw = common::unit_set(&mut rng, "y", 80, 32);
    let b = EmbeddingSet::new("x", 32, a.image_ids().to_vec(), a.labels().to_vec(), b_raw.vectors().to_vec()).unwrap();
    let fused = fuse_flip(&a, &b).unwrap();
    for i in 0..a.len() {
        let sum: Vec<f64> = a.row(i).iter().zip(b.row(i)).map(|(x, y)| x + y).collect();
        let n = tree_norm(&sum);
        for (c, s) in fused.row(i).iter().zip(&sum) {
            assert!((c - s / n).abs() < 1e-6);
        }
    }
}

#[test]
fn fuse_with_self_preserves_similarities() {
    let mut rng = common::rng(14);
    let s = common::unit_set(&mut rng, "s", 40, 24);
    let f = fuse_flip(&s, &s).unwrap();
    for i in 0..s.len() {
        for j in 0..s.len() {
            let before = common::naive_dot(s.row(i), s.row(j));
            let after = common::naive_dot(f.row(i), f.row(j));
            assert!((before - after).abs() < 1e-6);
        }
    }
}

#[test]
fn lfw_sized_probe_sidecar_loads() {
    let mut rng = common::rng(15);
    let set = common::raw_set(&mut rng, "lfw", 12_000, 512);
    let dir = tempfile::tempdir().unwrap();
    let (b, s) = (dir.path().join("lfw.bin"), dir.path().join("lfw.tsv"));
    save_embeddings(&set, &b, &s).unwrap();
    let loaded = load_embeddings(&b, &s).unwrap();
    assert_eq!(loaded.len(), 12_000);
    assert_eq!(loaded.dim(), 512);
    assert!(l2_normalize(&loaded).is_ok());
}

#[test]
fn manifest_coverage_matches_set_difference() {
    let mut rng = common::rng(16);
    let mut identities = BTreeMap::new();
    let mut all = Vec::new();
    for f in 0..20 {
        let n = rng.random_range(1..8);
        let imgs: Vec<String> = (0..n).map(|i| format!("f{f}/{i}.jpg")).collect();
        all.extend(imgs.iter().map(|i| (i.clone(), format!("f{f}"))));
        identities.insert(format!("f{f}"), imgs);
    }
    let manifest = DatasetManifest::new("m", identities).unwrap();
    all.shuffle(&mut rng);
    let keep = all.len() * 9 / 10;
    let kept = &all[..keep];
    let set = EmbeddingSet::new(
        "m",
        2,
        kept.iter().map(|(i, _)| i.clone()).collect(),
        kept.iter().map(|(_, l)| l.clone()).collect(),
        vec![1.0; keep * 2],
    )
    .unwrap();

    let cov = validate_manifest(&manifest, &set);
    let present: HashSet<&str> = kept.iter().map(|(i, _)| i.as_str()).collect();
    let mut oracle = Vec::new();
    for imgs in manifest.identities.values() {
        for i in imgs {
            if !present.contains(i.as_str()) {
                oracle.push(i.clone());
            }
        }
    }
    assert_eq!(cov.missing_embeddings, oracle);
    assert_eq!(cov.missing_embeddings.len(), all.len() - keep);
    assert!(cov.missing_from_manifest.is_empty());
    assert!(cov.label_mismatches.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_load_is_exact(
        rows in prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3), 1..20),
        label_count in 1usize..5,
    ) {
        let n = rows.len();
        let set = EmbeddingSet::new(
            "prop",
            3,
            (0..n).map(|i| format!("img {i}")).collect(),
            (0..n).map(|i| format!("id_{}", i % label_count)).collect(),
            rows.iter().flatten().map(|&v| v as f64).collect(),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (b, s) = (dir.path().join("e.bin"), dir.path().join("e.tsv"));
        save_embeddings(&set, &b, &s).unwrap();
        let back = load_embeddings(&b, &s).unwrap();
        prop_assert_eq!(back.image_ids(), set.image_ids());
        prop_assert_eq!(back.labels(), set.labels());
        for (x, y) in back.vectors().iter().zip(set.vectors()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
