//! Training-set variants built from a manifest and an overlapped-folder set.
//!
//! * ID-Disjoint drops every overlapped folder.
//! * ID-Overlap-R keeps the overlapped folders and instead drops the same
//!   number of randomly chosen non-overlapped folders.
//! * ID-Overlap-C is ID-Overlap-R with accepted split-identity merges
//!   collapsed into single folders.
//!
//! Sampling uses [`SplitMix64`] seeded with the requested seed. The drop set is
//! the first `m` entries of a partial Fisher-Yates shuffle of the
//! lexicographically sorted non-overlapped folder labels, where step `i`
//! swaps position `i` with `i + bounded(n - i)`. `bounded(r)` draws `x` until
//! `x < 2^64 - 1 - ((2^64 - 1) mod r)` and returns `x mod r`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding_store::DatasetManifest;
use crate::error::{Error, Result};

/// SplitMix64 (Steele, Lea, Flood 2014): 64-bit state advanced by the golden
/// gamma, output through the variant-13 finalizer.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..range` by rejection; `range` must be positive.
    pub fn bounded(&mut self, range: u64) -> u64 {
        assert!(range > 0, "empty range");
        let limit = u64::MAX - u64::MAX % range;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % range;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ID-Disjoint")]
    Disjoint,
    #[serde(rename = "ID-Overlap-R")]
    OverlapR,
    #[serde(rename = "ID-Overlap-C")]
    OverlapC,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Disjoint => "ID-Disjoint",
            Variant::OverlapR => "ID-Overlap-R",
            Variant::OverlapC => "ID-Overlap-C",
        }
    }

    /// Lowercase file-name form, e.g. `id-overlap-r`.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Disjoint => "id-disjoint",
            Variant::OverlapR => "id-overlap-r",
            Variant::OverlapC => "id-overlap-c",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id-disjoint" | "disjoint" => Ok(Variant::Disjoint),
            "id-overlap-r" | "overlap-r" => Ok(Variant::OverlapR),
            "id-overlap-c" | "overlap-c" => Ok(Variant::OverlapC),
            _ => Err(Error::Subset(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSpec {
    pub variant: Variant,
    pub seed: u64,
    pub overlapped_folders: BTreeSet<String>,
    pub accepted_merges: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedMerge {
    pub label: String,
    pub members: Vec<String>,
}

/// Sidecar record of how a variant was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub prng: String,
    pub dropped_folders: Vec<String>,
    pub applied_merges: Vec<AppliedMerge>,
    pub folder_count: usize,
    pub image_count: usize,
}

impl Provenance {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("provenance serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetOutput {
    pub manifest: DatasetManifest,
    pub provenance: Provenance,
}

fn check_overlapped(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<()> {
    let absent: Vec<&str> = spec
        .overlapped_folders
        .iter()
        .filter(|f| !manifest.identities.contains_key(*f))
        .map(String::as_str)
        .collect();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(Error::Subset(format!(
            "overlapped folders not in manifest: {}",
            absent.join(", ")
        )))
    }
}

fn check_variant(spec: &SubsetSpec, want: Variant) -> Result<()> {
    if spec.variant == want {
        Ok(())
    } else {
        Err(Error::Subset(format!("spec is for {}, not {want}", spec.variant)))
    }
}

fn without(manifest: &DatasetManifest, drop: &BTreeSet<String>) -> DatasetManifest {
    DatasetManifest {
        dataset_id: manifest.dataset_id.clone(),
        identities: manifest
            .identities
            .iter()
            .filter(|(f, _)| !drop.contains(*f))
            .map(|(f, imgs)| (f.clone(), imgs.clone()))
            .collect(),
    }
}

fn provenance(
    source: &DatasetManifest,
    spec: &SubsetSpec,
    out: &DatasetManifest,
    dropped: &BTreeSet<String>,
    applied_merges: Vec<AppliedMerge>,
) -> Provenance {
    Provenance {
        source_dataset: source.dataset_id.clone(),
        variant: spec.variant,
        seed: spec.seed,
        prng: "splitmix64".into(),
        dropped_folders: dropped.iter().cloned().collect(),
        applied_merges,
        folder_count: out.folder_count(),
        image_count: out.image_count(),
    }
}

fn disjoint(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<SubsetOutput> {
    check_overlapped(manifest, spec)?;
    let out = without(manifest, &spec.overlapped_folders);
    let provenance = provenance(manifest, spec, &out, &spec.overlapped_folders, vec![]);
    Ok(SubsetOutput { manifest: out, provenance })
}

/// Folders ID-Overlap-R drops for this spec.
pub fn sample_dropped(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<BTreeSet<String>> {
    check_overlapped(manifest, spec)?;
    let mut pool: Vec<&String> = manifest
        .identities
        .keys()
        .filter(|f| !spec.overlapped_folders.contains(*f))
        .collect();
    let m = spec.overlapped_folders.len();
    if pool.len() < m {
        return Err(Error::Subset(format!(
            "need {m} non-overlapped folders to drop, manifest has {}",
            pool.len()
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let n = pool.len();
    for i in 0..m {
        let j = i + rng.bounded((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    Ok(pool[..m].iter().map(|s| (*s).clone()).collect())
}

fn overlap_r(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<SubsetOutput> {
    let dropped = sample_dropped(manifest, spec)?;
    let out = without(manifest, &dropped);
    let provenance = provenance(manifest, spec, &out, &dropped, vec![]);
    Ok(SubsetOutput { manifest: out, provenance })
}

fn overlap_c(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<SubsetOutput> {
    let SubsetOutput {
        manifest: mut out,
        mut provenance,
    } = overlap_r(manifest, spec)?;

    let mut seen = HashSet::new();
    let mut groups = Vec::with_capacity(spec.accepted_merges.len());
    for g in &spec.accepted_merges {
        let members: BTreeSet<&String> = g.iter().collect();
        if members.len() < 2 {
            return Err(Error::Subset(format!(
                "merge group {g:?} needs at least two distinct folders"
            )));
        }
        for f in &members {
            if !out.identities.contains_key(*f) {
                return Err(Error::Subset(format!(
                    "merge group member {f} is not in the ID-Overlap-R output"
                )));
            }
            if !seen.insert(*f) {
                return Err(Error::Subset(format!("folder {f} appears in two merge groups")));
            }
        }
        groups.push(members);
    }

    let mut applied = Vec::with_capacity(groups.len());
    for members in groups {
        let label = (*members.first().unwrap()).clone();
        let mut images = Vec::new();
        for f in &members {
            images.extend(out.identities.remove(*f).unwrap());
        }
        out.identities.insert(label.clone(), images);
        applied.push(AppliedMerge {
            label,
            members: members.into_iter().cloned().collect(),
        });
    }
    applied.sort_by(|a, b| a.label.cmp(&b.label));
    provenance.applied_merges = applied;
    provenance.folder_count = out.folder_count();
    provenance.image_count = out.image_count();
    Ok(SubsetOutput { manifest: out, provenance })
}

/// Manifest minus the overlapped folders.
pub fn build_disjoint(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<DatasetManifest> {
    check_variant(spec, Variant::Disjoint)?;
    Ok(disjoint(manifest, spec)?.manifest)
}

/// Keeps overlapped folders, drops as many random non-overlapped ones.
pub fn build_overlap_r(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<DatasetManifest> {
    check_variant(spec, Variant::OverlapR)?;
    Ok(overlap_r(manifest, spec)?.manifest)
}

/// ID-Overlap-R with each accepted merge collapsed under its smallest label.
pub fn build_overlap_c(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<DatasetManifest> {
    check_variant(spec, Variant::OverlapC)?;
    Ok(overlap_c(manifest, spec)?.manifest)
}

/// Builds whichever variant the spec names, with its provenance record.
pub fn build_subset(manifest: &DatasetManifest, spec: &SubsetSpec) -> Result<SubsetOutput> {
    match spec.variant {
        Variant::Disjoint => disjoint(manifest, spec),
        Variant::OverlapR => overlap_r(manifest, spec),
        Variant::OverlapC => overlap_c(manifest, spec),
    }
}

/// Image multiset of a manifest as sorted `(image, count)`.
pub fn image_multiset(manifest: &DatasetManifest) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for imgs in manifest.identities.values() {
        for i in imgs {
            *out.entry(i.as_str()).or_default() += 1;
        }
    }
    out
}
