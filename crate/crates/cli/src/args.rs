use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use leakage_audit::subset::Variant;
use leakage_audit::verifier::Metric;

use crate::config::parse_root;

/// Audit train/test identity overlap from precomputed face embeddings.
///
/// Embedding blobs (`NAME.bin`) are read together with the sidecar of the
/// same stem (`NAME.tsv`) unless a sidecar is named explicitly.
#[derive(Debug, Parser)]
#[command(name = "leakage-audit", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file (seed, workers, out_dir, [policy], [roots])
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for all sampling [default: config file, else 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for matching and evaluation [default: config file, else all cores]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory for outputs not named with --out [default: config file, else .]
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Duplicate threshold [default: config file, else 0.9]
    #[arg(long, global = true)]
    pub tau_dup: Option<f64>,
    /// Same-identity threshold [default: config file, else 0.5]
    #[arg(long, global = true)]
    pub tau_id: Option<f64>,
    /// Lower edge of the review band [default: config file, else 0.4]
    #[arg(long, global = true)]
    pub review_low: Option<f64>,
    /// Upper edge of the review band [default: config file, else 0.8]
    #[arg(long, global = true)]
    pub review_high: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// L2-normalize an embedding set, optionally fusing it with flipped-image embeddings
    Normalize(NormalizeArgs),
    /// Exact top-k cosine matches of every probe against the gallery
    Match(MatchArgs),
    /// Histogram of match similarities
    Hist(HistArgs),
    /// Threshold-classify matches, then apply human annotations
    Classify(ClassifyArgs),
    /// Run the annotation service
    Serve(ServeArgs),
    /// Overlapped identities, matched folders, duplicates and discordant pairs
    OverlapReport(OverlapReportArgs),
    /// Split-identity merge proposals from shared test identities
    LinkGraph(LinkGraphArgs),
    /// Build an ID-Disjoint, ID-Overlap-R or ID-Overlap-C training manifest
    Subset(SubsetArgs),
    /// k-fold pair verification accuracy
    Eval(EvalArgs),
    /// Optimistic-bias ledger and difficulty/importance series
    BiasReport(BiasReportArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Embedding blob
    pub input: PathBuf,
    /// Sidecar for INPUT [default: INPUT with .tsv extension]
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Flipped-image embedding blob to sum with INPUT before normalizing
    #[arg(long)]
    pub flipped: Option<PathBuf>,
    /// Output blob; its sidecar is written next to it [default: OUT_DIR/normalized.bin]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Normalized probe blob
    #[arg(long)]
    pub probes: PathBuf,
    /// Normalized gallery blob
    #[arg(long)]
    pub gallery: PathBuf,
    /// Matches kept per probe
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Gallery bytes scanned per block
    #[arg(long, default_value_t = leakage_audit::matcher::DEFAULT_BLOCK_BYTES)]
    pub block_bytes: usize,
    /// Match file [default: OUT_DIR/matches.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Match file
    #[arg(long)]
    pub matches: PathBuf,
    /// Bin width over [-1, 1]
    #[arg(long, default_value_t = 0.05)]
    pub bin_width: f64,
    /// Only count matches of this rank [default: all ranks]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Histogram file [default: OUT_DIR/hist.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Match file
    #[arg(long)]
    pub matches: PathBuf,
    /// Verdict log from the annotation service
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Pair-verdict file [default: OUT_DIR/verdicts.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Match file
    #[arg(long)]
    pub matches: PathBuf,
    /// Append-only verdict log [default: OUT_DIR/annotations.tsv]
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Dataset id of probe images in /images URLs
    #[arg(long, default_value = "probe")]
    pub probe_dataset: String,
    /// Dataset id of gallery images in /images URLs
    #[arg(long, default_value = "gallery")]
    pub gallery_dataset: String,
    /// Image root for a dataset, repeatable [default: config [roots], else $LEAKAGE_AUDIT_HOME/images/DATASET]
    #[arg(long = "root", value_name = "DATASET=DIR", value_parser = parse_root)]
    pub roots: Vec<(String, PathBuf)>,
    /// Default similarity band LO,HI for the queue [default: none]
    #[arg(long, value_name = "LO,HI")]
    pub band: Option<String>,
    /// Re-serve annotated pairs until they get a verdict in this session
    #[arg(long)]
    pub relabel: bool,
}

#[derive(Debug, Args)]
pub struct OverlapReportArgs {
    /// Pair-verdict file from `classify`
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Probe sidecar (or blob, whose .tsv sidecar is used)
    #[arg(long)]
    pub probes: PathBuf,
    /// Gallery sidecar (or blob, whose .tsv sidecar is used)
    #[arg(long)]
    pub gallery: PathBuf,
    /// Test identities in the whole test set [default: distinct probe labels]
    #[arg(long)]
    pub test_identities: Option<usize>,
    /// Images in the whole test set [default: probe count]
    #[arg(long)]
    pub test_images: Option<usize>,
    /// Folders in the training set [default: distinct gallery labels]
    #[arg(long)]
    pub train_folders: Option<usize>,
    /// Report file [default: OUT_DIR/overlap_report.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the matched training folders, one per line
    #[arg(long)]
    pub folders_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinkGraphArgs {
    /// Pair-verdict file from `classify`
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Probe sidecar (or blob)
    #[arg(long)]
    pub probes: PathBuf,
    /// Gallery sidecar (or blob)
    #[arg(long)]
    pub gallery: PathBuf,
    /// Merge-proposal file [default: OUT_DIR/merge_proposals.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    /// Training manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// disjoint, overlap-r or overlap-c
    #[arg(long)]
    pub variant: Variant,
    /// Overlapped folder labels, one per line [default: none]
    #[arg(long)]
    pub overlapped: Option<PathBuf>,
    /// Accepted merge groups, tab-separated per line (overlap-c only)
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Output manifest; provenance goes to OUT with .provenance.json [default: OUT_DIR/VARIANT.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding blob covering every protocol image
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Protocol: JSON or classic pairs text
    #[arg(long)]
    pub protocol: PathBuf,
    /// cosine or euclidean
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    /// Flipped-image blob; enables original+flip fusion
    #[arg(long)]
    pub flipped: Option<PathBuf>,
    /// Require 10 folds of 300 genuine + 300 impostor pairs
    #[arg(long)]
    pub strict: bool,
    /// Report file [default: OUT_DIR/eval.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasReportArgs {
    /// Accuracy records `method,variant,test_set,accuracy`
    #[arg(long)]
    pub records: PathBuf,
    /// Ledger file [default: OUT_DIR/bias_ledger.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Series file [default: OUT_DIR/importance_series.csv]
    #[arg(long)]
    pub series: Option<PathBuf>,
}
