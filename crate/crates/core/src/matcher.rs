//! Exact top-k cosine search of every probe against a gallery.
//!
//! Scores are dot products of unit vectors accumulated sequentially in `f64`
//! and clamped to `[-1, 1]`; a score never depends on block sizes or worker
//! counts. Ties are broken by ascending gallery record index.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};

/// Gallery working-set budget per block.
pub const DEFAULT_BLOCK_BYTES: usize = 64 << 20;
const PROBES_PER_TASK: usize = 32;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub probe_id: String,
    /// 1-based.
    pub rank: usize,
    pub gallery_id: String,
    pub gallery_label: String,
    pub similarity: f64,
}

impl MatchResult {
    pub fn pair_id(&self) -> String {
        pair_id(&self.probe_id, &self.gallery_id)
    }
}

/// Stable identifier of a probe/gallery pair.
pub fn pair_id(probe_id: &str, gallery_id: &str) -> String {
    format!("{probe_id}|{gallery_id}")
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Four dot products against one probe; each sum keeps the sequential order of [`dot`].
#[inline]
fn dot4(p: &[f64], g0: &[f64], g1: &[f64], g2: &[f64], g3: &[f64]) -> [f64; 4] {
    let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        let x = p[i];
        a0 += x * g0[i];
        a1 += x * g1[i];
        a2 += x * g2[i];
        a3 += x * g3[i];
    }
    [a0, a1, a2, a3]
}

#[inline]
fn clamp_score(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(clamp_score(dot(a, b)))
}

/// Running top-k for one probe, best first.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// Candidates must arrive in ascending gallery index, so an equal score never displaces.
    #[inline]
    fn offer(&mut self, score: f64, index: usize) {
        if self.items.len() == self.k && score <= self.items[self.k - 1].0 {
            return;
        }
        let pos = self.items.partition_point(|&(s, _)| s >= score);
        self.items.insert(pos, (score, index));
        self.items.truncate(self.k);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    /// Bytes of gallery vector data scanned per block.
    pub block_bytes: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            block_bytes: DEFAULT_BLOCK_BYTES,
        }
    }
}

fn check_unit(set: &EmbeddingSet, side: &str) -> Result<()> {
    for i in 0..set.len() {
        let n = dot(set.row(i), set.row(i)).sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Invalid(format!(
                "{side} image {} has norm {n}; normalize the set first",
                set.image_ids()[i]
            )));
        }
    }
    Ok(())
}

/// The `k` most similar gallery rows for every probe, in probe order.
pub fn top_k(probes: &EmbeddingSet, gallery: &EmbeddingSet, k: usize) -> Result<Vec<Vec<MatchResult>>> {
    top_k_with(probes, gallery, k, MatchOptions::default())
}

pub fn top_k_with(
    probes: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    opts: MatchOptions,
) -> Result<Vec<Vec<MatchResult>>> {
    if probes.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            left: probes.dim(),
            right: gallery.dim(),
        });
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::Invalid(format!(
            "k = {k} must be in 1..={} (gallery size)",
            gallery.len()
        )));
    }
    check_unit(probes, "probe")?;
    check_unit(gallery, "gallery")?;

    let dim = gallery.dim();
    let block_rows = (opts.block_bytes / (dim * std::mem::size_of::<f64>())).max(1);
    let probe_idx: Vec<usize> = (0..probes.len()).collect();

    let ranked: Vec<Vec<(f64, usize)>> = probe_idx
        .par_chunks(PROBES_PER_TASK)
        .flat_map_iter(|chunk| {
            let mut tops: Vec<TopK> = chunk.iter().map(|_| TopK::new(k)).collect();
            let mut start = 0;
            while start < gallery.len() {
                let end = (start + block_rows).min(gallery.len());
                for (&p, top) in chunk.iter().zip(tops.iter_mut()) {
                    scan_block(probes.row(p), gallery, start, end, top);
                }
                start = end;
            }
            tops.into_iter().map(|t| t.items)
        })
        .collect();

    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(p, items)| {
            items
                .into_iter()
                .enumerate()
                .map(|(r, (score, g))| MatchResult {
                    probe_id: probes.image_ids()[p].clone(),
                    rank: r + 1,
                    gallery_id: gallery.image_ids()[g].clone(),
                    gallery_label: gallery.labels()[g].clone(),
                    similarity: score,
                })
                .collect()
        })
        .collect())
}

fn scan_block(probe: &[f64], gallery: &EmbeddingSet, start: usize, end: usize, top: &mut TopK) {
    let mut g = start;
    while g + 4 <= end {
        let s = dot4(probe, gallery.row(g), gallery.row(g + 1), gallery.row(g + 2), gallery.row(g + 3));
        for (j, score) in s.into_iter().enumerate() {
            top.offer(clamp_score(score), g + j);
        }
        g += 4;
    }
    for g in g..end {
        top.offer(clamp_score(dot(probe, gallery.row(g))), g);
    }
}

/// One line per result: `probe_id<TAB>rank<TAB>gallery_id<TAB>gallery_label<TAB>similarity`.
pub fn write_matches(path: &Path, results: &[MatchResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for m in results {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.9}",
            m.probe_id, m.rank, m.gallery_id, m.gallery_label, m.similarity
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(path, n + 1, msg);
        let f: Vec<&str> = line.split('\t').collect();
        let [probe_id, rank, gallery_id, gallery_label, similarity] = f[..] else {
            return Err(bad("expected 5 tab-separated fields"));
        };
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        let similarity: f64 = similarity.parse().map_err(|_| bad("bad similarity"))?;
        if rank == 0 || !(-1.0..=1.0).contains(&similarity) {
            return Err(bad("rank must be >= 1 and similarity in [-1, 1]"));
        }
        out.push(MatchResult {
            probe_id: probe_id.to_string(),
            rank,
            gallery_id: gallery_id.to_string(),
            gallery_label: gallery_label.to_string(),
            similarity,
        });
    }
    Ok(out)
}

/// Fixed-width score bins over `[-1, 1]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn edge(&self, i: usize) -> f64 {
        (-1.0 + i as f64 * self.bin_width).min(1.0)
    }

    fn bin_of(&self, score: f64) -> usize {
        let last = self.counts.len() - 1;
        let s = score.clamp(-1.0, 1.0);
        let mut i = (((s + 1.0) / self.bin_width).floor() as usize).min(last);
        // Division can land one bin off an exact edge.
        while i > 0 && s < self.edge(i) {
            i -= 1;
        }
        while i < last && s >= self.edge(i + 1) {
            i += 1;
        }
        i
    }

    /// `(low, high, count)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.edge(i), self.edge(i + 1), c))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin containing the nearest-rank `q`-quantile of the binned scores.
    pub fn quantile_bin(&self, q: f64) -> Option<(f64, f64)> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let rank = ((q.clamp(0.0, 1.0) * n as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some((self.edge(i), self.edge(i + 1)));
            }
        }
        unreachable!("rank is at most the total count")
    }
}

pub fn histogram(scores: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Invalid(format!("bin width {bin_width} must be positive")));
    }
    let n = ((2.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut h = Histogram {
        bin_width,
        counts: vec![0; n],
    };
    for &s in scores {
        let i = h.bin_of(s);
        h.counts[i] += 1;
    }
    Ok(h)
}
