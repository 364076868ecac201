#![allow(dead_code)]

use leakage_audit::embedding_store::{l2_normalize, EmbeddingSet};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn gaussian_row(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Raw (unnormalized) gaussian rows, values rounded to the f32 grid.
pub fn raw_set(rng: &mut StdRng, prefix: &str, n: usize, dim: usize) -> EmbeddingSet {
    let ids = (0..n).map(|i| format!("{prefix}{i:05}")).collect();
    let labels = (0..n).map(|i| format!("{prefix}id{}", i / 3)).collect();
    let values = (0..n * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32 as f64)
        .collect();
    EmbeddingSet::new(prefix, dim, ids, labels, values).unwrap()
}

pub fn unit_set(rng: &mut StdRng, prefix: &str, n: usize, dim: usize) -> EmbeddingSet {
    l2_normalize(&raw_set(rng, prefix, n, dim)).unwrap()
}

/// Sequential f64 dot product, written independently of the library.
pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Full-sort top-k oracle: `(gallery index, clamped score)` per probe.
pub fn naive_top_k(probes: &EmbeddingSet, gallery: &EmbeddingSet, k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..probes.len())
        .map(|p| {
            let mut all: Vec<(usize, f64)> = (0..gallery.len())
                .map(|g| (g, naive_dot(probes.row(p), gallery.row(g)).clamp(-1.0, 1.0)))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}
