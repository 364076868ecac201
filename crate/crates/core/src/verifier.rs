//! k-fold pair-verification over embeddings.
//!
//! For each fold the decision threshold is chosen on the union of all other
//! folds and applied to the held-out fold. Candidate thresholds are the
//! midpoints between adjacent distinct scores plus one sentinel below the
//! minimum and one above the maximum.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{fuse_flip, EmbeddingSet};
use crate::error::{Error, Result};

pub const STANDARD_FOLDS: usize = 10;
pub const STANDARD_PAIRS_PER_CLASS: usize = 300;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub genuine: Vec<(String, String)>,
    pub impostor: Vec<(String, String)>,
}

impl Fold {
    pub fn len(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairProtocol {
    pub name: String,
    pub folds: Vec<Fold>,
}

impl PairProtocol {
    /// Shape and pair checks. `strict` demands 10 folds of 300 + 300 pairs.
    pub fn validate(&self, strict: bool) -> Result<()> {
        if self.folds.len() < 2 {
            return Err(Error::Protocol(format!(
                "{} fold(s); cross-validation needs at least 2",
                self.folds.len()
            )));
        }
        for (i, f) in self.folds.iter().enumerate() {
            if f.genuine.is_empty() || f.impostor.is_empty() {
                return Err(Error::Protocol(format!("fold {} lacks genuine or impostor pairs", i + 1)));
            }
            if let Some((a, _)) = f.genuine.iter().chain(&f.impostor).find(|(a, b)| a == b) {
                return Err(Error::Protocol(format!("fold {}: pair of {a} with itself", i + 1)));
            }
            if strict && (f.genuine.len() != STANDARD_PAIRS_PER_CLASS || f.impostor.len() != STANDARD_PAIRS_PER_CLASS) {
                return Err(Error::Protocol(format!(
                    "fold {} has {} genuine + {} impostor pairs, expected {STANDARD_PAIRS_PER_CLASS} + {STANDARD_PAIRS_PER_CLASS}",
                    i + 1,
                    f.genuine.len(),
                    f.impostor.len()
                )));
            }
        }
        if strict && self.folds.len() != STANDARD_FOLDS {
            return Err(Error::Protocol(format!(
                "{} folds, expected {STANDARD_FOLDS}",
                self.folds.len()
            )));
        }
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.folds.iter().map(Fold::len).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("protocol serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Classic pairs text: header `folds<TAB>n`, then per fold `n` genuine
    /// lines `name i j` followed by `n` impostor lines `name1 i name2 j`.
    /// Only protocols whose ids follow [`classic_image_id`] can be written.
    pub fn to_classic(&self) -> Result<String> {
        let n = self.folds.first().map_or(0, |f| f.genuine.len());
        let mut out = format!("{}\t{}\n", self.folds.len(), n);
        for f in &self.folds {
            if f.genuine.len() != n || f.impostor.len() != n {
                return Err(Error::Protocol("classic format needs equal fold sizes".into()));
            }
            for (a, b) in &f.genuine {
                let (na, ia) = split_classic_id(a)?;
                let (nb, ib) = split_classic_id(b)?;
                if na != nb {
                    return Err(Error::Protocol(format!("genuine pair {a} / {b} spans two names")));
                }
                writeln!(out, "{na}\t{ia}\t{ib}").unwrap();
            }
            for (a, b) in &f.impostor {
                let (na, ia) = split_classic_id(a)?;
                let (nb, ib) = split_classic_id(b)?;
                writeln!(out, "{na}\t{ia}\t{nb}\t{ib}").unwrap();
            }
        }
        Ok(out)
    }
}

/// Image id used for classic pairs entries: `Name/Name_0001.jpg`.
pub fn classic_image_id(name: &str, number: u32) -> String {
    format!("{name}/{name}_{number:04}.jpg")
}

fn split_classic_id(id: &str) -> Result<(&str, u32)> {
    let bad = || Error::Protocol(format!("{id} is not of the form Name/Name_NNNN.jpg"));
    let (name, file) = id.split_once('/').ok_or_else(bad)?;
    let stem = file.strip_suffix(".jpg").ok_or_else(bad)?;
    let num = stem.strip_prefix(name).and_then(|s| s.strip_prefix('_')).ok_or_else(bad)?;
    Ok((name, num.parse().map_err(|_| bad())?))
}

fn parse_classic(path: &Path, text: &str) -> Result<PairProtocol> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty pairs file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let [folds, per_class] = head[..] else {
        return Err(Error::parse(path, 1, "header must be `folds<TAB>pairs_per_class`"));
    };
    let folds: usize = folds.parse().map_err(|_| Error::parse(path, 1, "bad fold count"))?;
    let per_class: usize = per_class
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad pairs-per-class count"))?;

    let num = |s: &str, line: usize| -> Result<u32> {
        s.parse().map_err(|_| Error::parse(path, line, format!("bad image number {s:?}")))
    };
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut fold = Fold::default();
        for want_genuine in [true, false] {
            for _ in 0..per_class {
                let Some((n, line)) = lines.next() else {
                    return Err(Error::parse(
                        path,
                        text.lines().count(),
                        format!("file ends inside fold {}", f + 1),
                    ));
                };
                let lineno = n + 1;
                let fields: Vec<&str> = line.split_whitespace().collect();
                match (want_genuine, &fields[..]) {
                    (true, [name, a, b]) => fold.genuine.push((
                        classic_image_id(name, num(a, lineno)?),
                        classic_image_id(name, num(b, lineno)?),
                    )),
                    (false, [n1, a, n2, b]) => fold.impostor.push((
                        classic_image_id(n1, num(a, lineno)?),
                        classic_image_id(n2, num(b, lineno)?),
                    )),
                    (true, _) => return Err(Error::parse(path, lineno, "expected genuine line `name n1 n2`")),
                    (false, _) => {
                        return Err(Error::parse(path, lineno, "expected impostor line `name1 n1 name2 n2`"))
                    }
                }
            }
        }
        out.push(fold);
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, n + 1, "trailing lines after the declared folds"));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pairs".into());
    Ok(PairProtocol { name, folds: out })
}

/// Reads a native JSON protocol or a classic pairs text file.
pub fn load_protocol(path: &Path, strict: bool) -> Result<PairProtocol> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let protocol = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
    } else {
        parse_classic(path, &text)?
    };
    protocol.validate(strict)?;
    Ok(protocol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Higher is more similar; accept when `score >= t`.
    Cosine,
    /// Distance between unit vectors; accept when `score <= t`.
    Euclidean,
}

impl Metric {
    /// Maps a score so that larger always means "more similar".
    fn orient(self, score: f64) -> f64 {
        match self {
            Metric::Cosine => score,
            Metric::Euclidean => -score,
        }
    }

    pub fn accepts(self, score: f64, threshold: f64) -> bool {
        match self {
            Metric::Cosine => score >= threshold,
            Metric::Euclidean => score <= threshold,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Invalid(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    Original,
    OriginalPlusFlip,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Original => "original",
            Fusion::OriginalPlusFlip => "original+flip",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub score: f64,
    pub genuine: bool,
}

fn pair_score(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => {
            let mut acc = 0.0;
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
            acc.clamp(-1.0, 1.0)
        }
        Metric::Euclidean => {
            let mut acc = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                acc += d * d;
            }
            acc.sqrt()
        }
    }
}

/// Scores every pair, fold by fold; genuine pairs first within each fold.
pub fn pair_scores(set: &EmbeddingSet, protocol: &PairProtocol, metric: Metric) -> Result<Vec<Vec<ScoredPair>>> {
    let mut missing = BTreeSet::new();
    for f in &protocol.folds {
        for (a, b) in f.genuine.iter().chain(&f.impostor) {
            for id in [a, b] {
                if set.index_of(id).is_none() {
                    missing.insert(id.clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing.into_iter().collect()));
    }
    let score = |(a, b): &(String, String), genuine| ScoredPair {
        score: pair_score(
            set.row(set.index_of(a).unwrap()),
            set.row(set.index_of(b).unwrap()),
            metric,
        ),
        genuine,
    };
    Ok(protocol
        .folds
        .iter()
        .map(|f| {
            f.genuine
                .iter()
                .map(|p| score(p, true))
                .chain(f.impostor.iter().map(|p| score(p, false)))
                .collect()
        })
        .collect())
}

/// Threshold maximizing accuracy over `pairs`; returns `(threshold, correct)`.
fn best_threshold_counts(pairs: &[ScoredPair], metric: Metric) -> Result<(f64, usize)> {
    let genuine = pairs.iter().filter(|p| p.genuine).count();
    if genuine == 0 || genuine == pairs.len() {
        return Err(Error::Invalid(
            "threshold search needs at least one genuine and one impostor score".into(),
        ));
    }
    let mut keyed: Vec<(f64, bool)> = pairs.iter().map(|p| (metric.orient(p.score), p.genuine)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Threshold below index i accepts keyed[i..]. Start with everything accepted.
    let mut correct = genuine;
    let mut best = (keyed[0].0 - 1.0, correct);
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        while i < keyed.len() && keyed[i].0 == key {
            correct = if keyed[i].1 { correct - 1 } else { correct + 1 };
            i += 1;
        }
        if correct > best.1 {
            let t = if i < keyed.len() {
                (key + keyed[i].0) / 2.0
            } else {
                key + 1.0
            };
            best = (t, correct);
        }
    }
    Ok((metric.orient(best.0), best.1))
}

/// Best accuracy threshold for tagged scores. Among equally accurate
/// thresholds the most permissive one wins: the smallest cosine threshold,
/// or equivalently the largest distance threshold.
pub fn best_threshold(scores: &[f64], genuine: &[bool], metric: Metric) -> Result<(f64, f64)> {
    if scores.len() != genuine.len() {
        return Err(Error::Invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            genuine.len()
        )));
    }
    let pairs: Vec<ScoredPair> = scores
        .iter()
        .zip(genuine)
        .map(|(&score, &genuine)| ScoredPair { score, genuine })
        .collect();
    let (t, correct) = best_threshold_counts(&pairs, metric)?;
    Ok((t, correct as f64 / pairs.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub threshold: f64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub protocol: String,
    pub metric: Metric,
    pub fusion: Fusion,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of fold accuracies.
    pub std_accuracy: f64,
}

impl VerificationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# protocol\t{}", self.protocol).unwrap();
        writeln!(s, "# metric\t{}", self.metric).unwrap();
        writeln!(s, "# fusion\t{}", self.fusion).unwrap();
        writeln!(s, "fold\tthreshold\taccuracy").unwrap();
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(s, "{}\t{:.9}\t{:.2}", i + 1, f.threshold, f.accuracy * 100.0).unwrap();
        }
        writeln!(s, "mean\t{:.2}", self.mean_accuracy * 100.0).unwrap();
        writeln!(s, "std\t{:.2}", self.std_accuracy * 100.0).unwrap();
        s
    }
}

/// Cross-validated accuracy over already-scored folds.
pub fn evaluate_scores(
    folds: &[Vec<ScoredPair>],
    metric: Metric,
    fusion: Fusion,
    protocol_name: &str,
) -> Result<VerificationReport> {
    if folds.len() < 2 {
        return Err(Error::Protocol("cross-validation needs at least 2 folds".into()));
    }
    let results: Vec<FoldResult> = (0..folds.len())
        .into_par_iter()
        .map(|test| {
            let validation: Vec<ScoredPair> = folds
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != test)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let (threshold, _) = best_threshold_counts(&validation, metric)?;
            let held_out = &folds[test];
            let correct = held_out
                .iter()
                .filter(|p| metric.accepts(p.score, threshold) == p.genuine)
                .count();
            Ok(FoldResult {
                threshold,
                correct,
                total: held_out.len(),
                accuracy: correct as f64 / held_out.len() as f64,
            })
        })
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let var = results.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(VerificationReport {
        protocol: protocol_name.to_string(),
        metric,
        fusion,
        folds: results,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
    })
}

/// Runs the protocol on `set`, first fusing with `flipped` when given.
pub fn evaluate(
    set: &EmbeddingSet,
    protocol: &PairProtocol,
    metric: Metric,
    flipped: Option<&EmbeddingSet>,
) -> Result<VerificationReport> {
    let (fused, fusion);
    let scored_set = match flipped {
        Some(f) => {
            fused = fuse_flip(set, f)?;
            fusion = Fusion::OriginalPlusFlip;
            &fused
        }
        None => {
            fusion = Fusion::Original;
            set
        }
    };
    let folds = pair_scores(scored_set, protocol, metric)?;
    evaluate_scores(&folds, metric, fusion, &protocol.name)
}
