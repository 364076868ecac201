use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use super::log::VerdictLog;
use super::{AnnotationRecord, Verdict};
use crate::error::{Error, Result};
use crate::matcher::{read_matches, MatchResult};

/// Which pairs a queue request may serve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueFilter {
    /// Inclusive similarity band.
    pub band: Option<(f64, f64)>,
    /// Skip pairs with any recorded verdict. When false, pairs are re-served
    /// until they receive a verdict in the current session (a relabeling pass).
    pub unannotated_only: bool,
}

impl Default for QueueFilter {
    fn default() -> Self {
        Self {
            band: None,
            unannotated_only: true,
        }
    }
}

impl QueueFilter {
    fn admits_score(&self, s: f64) -> bool {
        self.band.is_none_or(|(lo, hi)| lo <= s && s <= hi)
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub filter: QueueFilter,
    pub probe_dataset: String,
    pub gallery_dataset: String,
    /// Band flagged in pair descriptors as needing review.
    pub review_band: (f64, f64),
    pub duplicate_threshold: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            filter: QueueFilter::default(),
            probe_dataset: "probe".into(),
            gallery_dataset: "gallery".into(),
            review_band: (0.4, 0.8),
            duplicate_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFlags {
    pub review_band: bool,
    pub duplicate_candidate: bool,
}

/// What the review client needs to show one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDescriptor {
    pub pair_id: String,
    pub probe_id: String,
    pub gallery_id: String,
    pub gallery_label: String,
    pub rank: usize,
    pub similarity: f64,
    pub probe_image: String,
    pub gallery_image: String,
    pub flags: PairFlags,
    pub current_verdict: Option<Verdict>,
    pub current_duplicate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub annotated: usize,
    pub total: usize,
    pub counts: BTreeMap<Verdict, usize>,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub pair_id: String,
    /// False when the record repeated the pair's current verdict exactly.
    pub appended: bool,
    pub annotated: usize,
    pub total: usize,
}

/// Review queue over a match file, backed by a verdict log.
#[derive(Debug)]
pub struct AnnotationSession {
    pairs: Vec<MatchResult>,
    by_id: HashMap<String, usize>,
    log: VerdictLog,
    /// Effective record per pair with its log position.
    effective: HashMap<String, (AnnotationRecord, usize)>,
    log_len: usize,
    answered: HashSet<String>,
    discarded_partial: usize,
    options: SessionOptions,
}

fn image_url(dataset: &str, image_id: &str) -> String {
    format!("/images/{dataset}/{image_id}")
}

impl AnnotationSession {
    pub fn open(match_path: &Path, verdict_path: &Path, options: SessionOptions) -> Result<Self> {
        let pairs = read_matches(match_path)?;
        Self::from_matches(pairs, verdict_path, options)
    }

    pub fn from_matches(mut pairs: Vec<MatchResult>, verdict_path: &Path, options: SessionOptions) -> Result<Self> {
        // Stable: equal similarities keep match-file order.
        pairs.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, m) in pairs.iter().enumerate() {
            if by_id.insert(m.pair_id(), i).is_some() {
                return Err(Error::Invalid(format!("pair {} listed twice", m.pair_id())));
            }
        }
        let (log, loaded) = VerdictLog::open(verdict_path)?;
        let unknown: Vec<String> = loaded
            .records
            .iter()
            .filter(|r| !by_id.contains_key(&r.pair_id))
            .map(|r| r.pair_id.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownPairs(unknown));
        }
        let mut session = Self {
            pairs,
            by_id,
            log,
            effective: HashMap::new(),
            log_len: 0,
            answered: HashSet::new(),
            discarded_partial: loaded.discarded_partial,
            options,
        };
        for r in loaded.records {
            session.apply(r);
        }
        Ok(session)
    }

    /// Latest timestamp wins; equal timestamps go to the later log entry.
    fn apply(&mut self, record: AnnotationRecord) {
        let seq = self.log_len;
        self.log_len += 1;
        match self.effective.get(&record.pair_id) {
            Some((cur, _)) if cur.timestamp > record.timestamp => {}
            _ => {
                self.effective.insert(record.pair_id.clone(), (record, seq));
            }
        }
    }

    /// Partial trailing records dropped when the verdict file was opened.
    pub fn discarded_partial(&self) -> usize {
        self.discarded_partial
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn contains(&self, pair_id: &str) -> bool {
        self.by_id.contains_key(pair_id)
    }

    pub fn effective(&self, pair_id: &str) -> Option<&AnnotationRecord> {
        self.effective.get(pair_id).map(|(r, _)| r)
    }

    fn pending(&self, m: &MatchResult, filter: &QueueFilter) -> bool {
        if !filter.admits_score(m.similarity) {
            return false;
        }
        let id = m.pair_id();
        if filter.unannotated_only {
            !self.effective.contains_key(&id)
        } else {
            !self.answered.contains(&id)
        }
    }

    /// Pairs still to be served under `filter`, highest similarity first.
    pub fn queue(&self, filter: &QueueFilter) -> Vec<&MatchResult> {
        self.pairs.iter().filter(|m| self.pending(m, filter)).collect()
    }

    /// Queue under the session's default filter.
    pub fn default_queue(&self) -> Vec<&MatchResult> {
        self.queue(&self.options.filter)
    }

    pub fn next_pair(&self, filter: &QueueFilter) -> Option<PairDescriptor> {
        self.pairs
            .iter()
            .find(|m| self.pending(m, filter))
            .map(|m| self.describe(m))
    }

    pub fn describe(&self, m: &MatchResult) -> PairDescriptor {
        let pair_id = m.pair_id();
        let current = self.effective(&pair_id);
        let (lo, hi) = self.options.review_band;
        PairDescriptor {
            probe_image: image_url(&self.options.probe_dataset, &m.probe_id),
            gallery_image: image_url(&self.options.gallery_dataset, &m.gallery_id),
            flags: PairFlags {
                review_band: lo <= m.similarity && m.similarity <= hi,
                duplicate_candidate: m.similarity >= self.options.duplicate_threshold,
            },
            current_verdict: current.map(|r| r.verdict),
            current_duplicate: current.map(|r| r.duplicate),
            pair_id,
            probe_id: m.probe_id.clone(),
            gallery_id: m.gallery_id.clone(),
            gallery_label: m.gallery_label.clone(),
            rank: m.rank,
            similarity: m.similarity,
        }
    }

    /// Validates, appends durably, then acknowledges.
    pub fn record_verdict(&mut self, record: AnnotationRecord) -> Result<Ack> {
        if !self.contains(&record.pair_id) {
            return Err(Error::UnknownPairs(vec![record.pair_id]));
        }
        record.check()?;
        let repeat = self.effective(&record.pair_id) == Some(&record);
        if !repeat {
            self.log.append(&record)?;
            self.answered.insert(record.pair_id.clone());
            self.apply(record.clone());
        }
        Ok(Ack {
            pair_id: record.pair_id,
            appended: !repeat,
            annotated: self.effective.len(),
            total: self.pairs.len(),
        })
    }

    pub fn progress(&self) -> Progress {
        let mut counts: BTreeMap<Verdict, usize> =
            [Verdict::Same, Verdict::Different, Verdict::Unsure].into_iter().map(|v| (v, 0)).collect();
        let mut duplicates = 0;
        for (r, _) in self.effective.values() {
            *counts.entry(r.verdict).or_default() += 1;
            duplicates += usize::from(r.duplicate);
        }
        Progress {
            annotated: self.effective.len(),
            total: self.pairs.len(),
            counts,
            duplicates,
        }
    }
}
