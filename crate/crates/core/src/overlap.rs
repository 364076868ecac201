//! From match scores and human verdicts to an identity-overlap report,
//! discordance lists, and split-identity merge proposals.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, Verdict};
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::matcher::{pair_id, MatchResult};
use crate::union_find::UnionFind;

/// Score thresholds for automatic classification and review.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub tau_dup: f64,
    pub tau_id: f64,
    pub review_low: f64,
    pub review_high: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            tau_dup: 0.9,
            tau_id: 0.5,
            review_low: 0.4,
            review_high: 0.8,
        }
    }
}

impl ThresholdPolicy {
    /// Requires `review_low <= tau_id <= review_high <= tau_dup`, all in `[-1, 1]`.
    pub fn validate(&self) -> Result<()> {
        let vals = [self.review_low, self.tau_id, self.review_high, self.tau_dup];
        if vals.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Policy(format!("thresholds must lie in [-1, 1]: {self:?}")));
        }
        if !vals.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Policy(format!(
                "need review_low <= tau_id <= review_high <= tau_dup: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn in_review_band(&self, similarity: f64) -> bool {
        self.review_low <= similarity && similarity <= self.review_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Auto,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub probe_id: String,
    pub gallery_id: String,
    pub similarity: f64,
    pub verdict: Verdict,
    pub duplicate: bool,
    pub source: Source,
    pub needs_review: bool,
}

impl PairVerdict {
    pub fn pair_id(&self) -> String {
        pair_id(&self.probe_id, &self.gallery_id)
    }

    /// Unsure counts as different for aggregation.
    pub fn is_same(&self) -> bool {
        self.verdict == Verdict::Same
    }
}

pub fn auto_classify(matches: &[MatchResult], policy: &ThresholdPolicy) -> Result<Vec<PairVerdict>> {
    policy.validate()?;
    Ok(matches
        .iter()
        .map(|m| {
            let s = m.similarity;
            let (verdict, duplicate) = if s >= policy.tau_dup {
                (Verdict::Same, true)
            } else if s >= policy.tau_id {
                (Verdict::Same, false)
            } else {
                (Verdict::Different, false)
            };
            PairVerdict {
                probe_id: m.probe_id.clone(),
                gallery_id: m.gallery_id.clone(),
                similarity: s,
                verdict,
                duplicate,
                source: Source::Auto,
                needs_review: policy.in_review_band(s),
            }
        })
        .collect())
}

/// Replaces automatic verdicts with human ones; the latest timestamp wins,
/// equal timestamps go to the later record.
pub fn merge_annotations(auto: &[PairVerdict], annotations: &[AnnotationRecord]) -> Result<Vec<PairVerdict>> {
    let index: HashMap<String, usize> = auto.iter().enumerate().map(|(i, v)| (v.pair_id(), i)).collect();
    let mut unknown = Vec::new();
    let mut latest: HashMap<usize, &AnnotationRecord> = HashMap::new();
    for a in annotations {
        let Some(&i) = index.get(&a.pair_id) else {
            if !unknown.contains(&a.pair_id) {
                unknown.push(a.pair_id.clone());
            }
            continue;
        };
        match latest.get(&i) {
            Some(cur) if cur.timestamp > a.timestamp => {}
            _ => {
                latest.insert(i, a);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownPairs(unknown));
    }
    let mut out = auto.to_vec();
    for (i, a) in latest {
        let v = &mut out[i];
        v.verdict = a.verdict;
        v.duplicate = a.duplicate;
        v.source = Source::Human;
        v.needs_review = a.verdict == Verdict::Unsure;
    }
    Ok(out)
}

/// `(hsns, lsts)`: high-similarity pairs judged different, low-similarity pairs judged same.
pub fn flag_discordant(verdicts: &[PairVerdict], policy: &ThresholdPolicy) -> (Vec<PairVerdict>, Vec<PairVerdict>) {
    let hsns = verdicts
        .iter()
        .filter(|v| v.similarity >= policy.review_high && v.verdict == Verdict::Different)
        .cloned()
        .collect();
    let lsts = verdicts
        .iter()
        .filter(|v| v.similarity <= policy.review_low && v.verdict == Verdict::Same)
        .cloned()
        .collect();
    (hsns, lsts)
}

/// Image id -> identity label.
pub trait LabelLookup {
    fn label(&self, image_id: &str) -> Option<&str>;
}

impl LabelLookup for EmbeddingSet {
    fn label(&self, image_id: &str) -> Option<&str> {
        self.label_of(image_id)
    }
}

impl LabelLookup for HashMap<String, String> {
    fn label(&self, image_id: &str) -> Option<&str> {
        self.get(image_id).map(String::as_str)
    }
}

impl LabelLookup for BTreeMap<String, String> {
    fn label(&self, image_id: &str) -> Option<&str> {
        self.get(image_id).map(String::as_str)
    }
}

/// Denominators for the report's fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub test_identities: usize,
    /// Probe images that were matched.
    pub audited_images: usize,
    /// Every image in the test set, audited or not.
    pub test_images: usize,
    pub train_folders: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountFraction {
    pub count: usize,
    pub total: usize,
    pub fraction: f64,
}

impl CountFraction {
    fn new(count: usize, total: usize) -> Self {
        let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        Self { count, total, fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub overlapped_identities: CountFraction,
    pub matched_folders: CountFraction,
    /// Distinct probe images with a duplicate, over audited probes.
    pub duplicate_images_of_audited: CountFraction,
    /// The same count over all test-set images.
    pub duplicate_images_of_test_set: CountFraction,
    pub overlapped_test_identities: BTreeSet<String>,
    pub matched_train_folders: BTreeSet<String>,
    /// `(probe_id, gallery_id)` pairs marked duplicate.
    pub duplicate_images: Vec<(String, String)>,
    pub hsns: Vec<PairVerdict>,
    pub lsts: Vec<PairVerdict>,
}

impl OverlapReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn resolve<'a>(labels: &'a dyn LabelLookup, id: &str, missing: &mut Vec<String>) -> Option<&'a str> {
    let l = labels.label(id);
    if l.is_none() && !missing.iter().any(|m| m == id) {
        missing.push(id.to_string());
    }
    l
}

/// `(test identity, train folder)` for every same-verdict pair.
fn same_edges(
    verdicts: &[PairVerdict],
    probe_labels: &dyn LabelLookup,
    gallery_labels: &dyn LabelLookup,
) -> Result<BTreeSet<(String, String)>> {
    let mut missing = Vec::new();
    let mut edges = BTreeSet::new();
    for v in verdicts {
        let p = resolve(probe_labels, &v.probe_id, &mut missing);
        let g = resolve(gallery_labels, &v.gallery_id, &mut missing);
        if let (Some(p), Some(g), true) = (p, g, v.is_same()) {
            edges.insert((p.to_string(), g.to_string()));
        }
    }
    if missing.is_empty() {
        Ok(edges)
    } else {
        Err(Error::UnknownIds(missing))
    }
}

pub fn aggregate_overlap(
    verdicts: &[PairVerdict],
    probe_labels: &dyn LabelLookup,
    gallery_labels: &dyn LabelLookup,
    totals: &Totals,
    policy: &ThresholdPolicy,
) -> Result<OverlapReport> {
    let edges = same_edges(verdicts, probe_labels, gallery_labels)?;
    let overlapped: BTreeSet<String> = edges.iter().map(|(t, _)| t.clone()).collect();
    let folders: BTreeSet<String> = edges.into_iter().map(|(_, f)| f).collect();

    let mut duplicate_images: Vec<(String, String)> = verdicts
        .iter()
        .filter(|v| v.duplicate && v.is_same())
        .map(|v| (v.probe_id.clone(), v.gallery_id.clone()))
        .collect();
    duplicate_images.sort();
    duplicate_images.dedup();
    let dup_probes = duplicate_images
        .iter()
        .map(|(p, _)| p.as_str())
        .collect::<HashSet<_>>()
        .len();

    let (mut hsns, mut lsts) = flag_discordant(verdicts, policy);
    let key = |v: &PairVerdict| (v.probe_id.clone(), v.gallery_id.clone());
    hsns.sort_by_key(key);
    lsts.sort_by_key(key);

    Ok(OverlapReport {
        overlapped_identities: CountFraction::new(overlapped.len(), totals.test_identities),
        matched_folders: CountFraction::new(folders.len(), totals.train_folders),
        duplicate_images_of_audited: CountFraction::new(dup_probes, totals.audited_images),
        duplicate_images_of_test_set: CountFraction::new(dup_probes, totals.test_images),
        overlapped_test_identities: overlapped,
        matched_train_folders: folders,
        duplicate_images,
        hsns,
        lsts,
    })
}

/// Bipartite links between test identities and train folders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityLinkGraph {
    pub edges: BTreeSet<(String, String)>,
    /// Folder groups joined through shared test identities, each with >= 2
    /// folders; members sorted, groups ordered by first member.
    pub merge_proposals: Vec<Vec<String>>,
}

impl IdentityLinkGraph {
    pub fn test_identity_count(&self) -> usize {
        self.edges.iter().map(|(t, _)| t).collect::<BTreeSet<_>>().len()
    }

    pub fn train_folder_count(&self) -> usize {
        self.edges.iter().map(|(_, f)| f).collect::<BTreeSet<_>>().len()
    }

    /// Folders beyond one per merged group: `sum(|group| - 1)`.
    pub fn surplus_folders(&self) -> usize {
        self.merge_proposals.iter().map(|g| g.len() - 1).sum()
    }
}

pub fn build_link_graph(
    verdicts: &[PairVerdict],
    probe_labels: &dyn LabelLookup,
    gallery_labels: &dyn LabelLookup,
) -> Result<IdentityLinkGraph> {
    let edges = same_edges(verdicts, probe_labels, gallery_labels)?;
    Ok(IdentityLinkGraph {
        merge_proposals: merge_components(&edges),
        edges,
    })
}

fn merge_components(edges: &BTreeSet<(String, String)>) -> Vec<Vec<String>> {
    let folders: Vec<&str> = edges
        .iter()
        .map(|(_, f)| f.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let folder_idx: HashMap<&str, usize> = folders.iter().enumerate().map(|(i, f)| (*f, i)).collect();

    let mut uf = UnionFind::new(folders.len());
    let mut first_folder: HashMap<&str, usize> = HashMap::new();
    for (t, f) in edges {
        let fi = folder_idx[f.as_str()];
        match first_folder.get(t.as_str()) {
            Some(&other) => {
                uf.union(other, fi);
            }
            None => {
                first_folder.insert(t.as_str(), fi);
            }
        }
    }
    uf.groups()
        .into_iter()
        .filter(|g| g.len() >= 2)
        .map(|g| g.into_iter().map(|i| folders[i].to_string()).collect())
        .collect()
}

/// One tab-separated group per line (merge proposals and accepted merges).
pub fn write_groups(path: &Path, groups: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    for g in groups {
        text.push_str(&g.join("\t"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_groups(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect())
}

/// One label per line.
pub fn write_labels<'a>(path: &Path, labels: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut text = String::new();
    for l in labels {
        text.push_str(l);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// `probe_id, gallery_id, similarity, verdict, duplicate, source, needs_review`, tab-separated.
pub fn write_verdicts(path: &Path, verdicts: &[PairVerdict]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in verdicts {
        let source = match v.source {
            Source::Auto => "auto",
            Source::Human => "human",
        };
        writeln!(
            w,
            "{}\t{}\t{:.9}\t{}\t{}\t{}\t{}",
            v.probe_id, v.gallery_id, v.similarity, v.verdict, v.duplicate, source, v.needs_review
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<PairVerdict>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::parse(path, n + 1, m);
        let f: Vec<&str> = line.split('\t').collect();
        let [probe, gallery, sim, verdict, dup, source, review] = f[..] else {
            return Err(bad("expected 7 tab-separated fields".into()));
        };
        let flag = |s: &str| match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad(format!("bad boolean {s:?}"))),
        };
        out.push(PairVerdict {
            probe_id: probe.to_string(),
            gallery_id: gallery.to_string(),
            similarity: sim.parse().map_err(|_| bad(format!("bad similarity {sim:?}")))?,
            verdict: verdict.parse().map_err(|e: Error| bad(e.to_string()))?,
            duplicate: flag(dup)?,
            source: match source {
                "auto" => Source::Auto,
                "human" => Source::Human,
                _ => return Err(bad(format!("bad source {source:?}"))),
            },
            needs_review: flag(review)?,
        });
    }
    Ok(out)
}
