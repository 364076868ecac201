use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use leakage_audit::annotation::{load_log, AnnotationSession, QueueFilter, SessionOptions};
use leakage_audit::embedding_store::{
    fuse_flip, l2_normalize, load_embeddings, read_sidecar, save_embeddings, DatasetManifest, EmbeddingSet,
};
use leakage_audit::matcher::{histogram, read_matches, top_k_with, write_matches, MatchOptions};
use leakage_audit::overlap::{
    aggregate_overlap, auto_classify, build_link_graph, merge_annotations, read_groups, read_labels,
    read_verdicts, write_groups, write_labels, write_verdicts, Totals,
};
use leakage_audit::report::{compute_bias, importance_curve, parse_records, series_to_csv};
use leakage_audit::subset::{build_subset, SubsetSpec};
use leakage_audit::verifier::{evaluate, load_protocol};

use crate::args::*;
use crate::config::{AuditConfig, ConfigFile, Overrides, HOME_VAR};
use crate::error::{CliError, CliResult};
use crate::server::{self, parse_band, AppState};

pub fn run(cli: Cli) -> CliResult<()> {
    let config = resolve_config(&cli)?;
    // Ignored when a pool already exists (repeated in-process runs).
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global();
    match cli.command {
        Command::Normalize(a) => normalize(&config, a),
        Command::Match(a) => match_cmd(&config, a),
        Command::Hist(a) => hist(&config, a),
        Command::Classify(a) => classify(&config, a),
        Command::Serve(a) => serve(config, a),
        Command::OverlapReport(a) => overlap_report(&config, a),
        Command::LinkGraph(a) => link_graph(&config, a),
        Command::Subset(a) => subset(&config, a),
        Command::Eval(a) => eval(&config, a),
        Command::BiasReport(a) => bias_report(&config, a),
    }
}

fn resolve_config(cli: &Cli) -> CliResult<AuditConfig> {
    let g = &cli.global;
    let file = g.config.as_deref().map(ConfigFile::load).transpose()?;
    let roots = match &cli.command {
        Command::Serve(s) => s.roots.iter().cloned().collect(),
        _ => Default::default(),
    };
    let flags = Overrides {
        seed: g.seed,
        workers: g.workers,
        out_dir: g.out_dir.clone(),
        policy: [g.tau_dup, g.tau_id, g.review_low, g.review_high],
        roots,
    };
    let home = std::env::var_os(HOME_VAR).filter(|h| !h.is_empty()).map(PathBuf::from);
    AuditConfig::resolve(file, &flags, home)
}

/// Sidecar path for a blob: same stem, `.tsv` extension.
pub fn sidecar_of(blob: &Path) -> PathBuf {
    blob.with_extension("tsv")
}

fn load_set(blob: &Path) -> CliResult<EmbeddingSet> {
    Ok(load_embeddings(blob, &sidecar_of(blob))?)
}

/// Creates the parent directory of an output file.
fn prepare(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    prepare(path)?;
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn normalize(config: &AuditConfig, a: NormalizeArgs) -> CliResult<()> {
    let sidecar = a.sidecar.unwrap_or_else(|| sidecar_of(&a.input));
    let set = load_embeddings(&a.input, &sidecar)?;
    let out_set = match &a.flipped {
        Some(f) => fuse_flip(&set, &load_embeddings(f, &sidecar_of(f))?)?,
        None => l2_normalize(&set)?,
    };
    let out = config.output(&a.out, "normalized.bin");
    prepare(&out)?;
    save_embeddings(&out_set, &out, &sidecar_of(&out))?;
    println!("normalized {} embeddings -> {}", out_set.len(), out.display());
    Ok(())
}

fn match_cmd(config: &AuditConfig, a: MatchArgs) -> CliResult<()> {
    let probes = load_set(&a.probes)?;
    let gallery = load_set(&a.gallery)?;
    if a.block_bytes == 0 {
        return Err(CliError::Usage("--block-bytes must be positive".into()));
    }
    let results = top_k_with(
        &probes,
        &gallery,
        a.k,
        MatchOptions {
            block_bytes: a.block_bytes,
        },
    )?;
    let flat: Vec<_> = results.into_iter().flatten().collect();
    let out = config.output(&a.out, "matches.tsv");
    prepare(&out)?;
    write_matches(&out, &flat)?;
    println!(
        "{} probes x {} gallery, k = {}: {} matches -> {}",
        probes.len(),
        gallery.len(),
        a.k,
        flat.len(),
        out.display()
    );
    Ok(())
}

fn hist(config: &AuditConfig, a: HistArgs) -> CliResult<()> {
    let matches = read_matches(&a.matches)?;
    let scores: Vec<f64> = matches
        .iter()
        .filter(|m| a.rank.is_none_or(|r| m.rank == r))
        .map(|m| m.similarity)
        .collect();
    let h = histogram(&scores, a.bin_width)?;
    let mut text = String::from("low\thigh\tcount\n");
    for (lo, hi, c) in h.bins() {
        text.push_str(&format!("{lo:.6}\t{hi:.6}\t{c}\n"));
    }
    let out = config.output(&a.out, "hist.tsv");
    write_text(&out, &text)?;
    println!("{} scores in {} bins -> {}", h.total(), h.counts.len(), out.display());
    Ok(())
}

fn classify(config: &AuditConfig, a: ClassifyArgs) -> CliResult<()> {
    let matches = read_matches(&a.matches)?;
    let mut verdicts = auto_classify(&matches, &config.policy)?;
    let mut human = 0;
    if let Some(path) = &a.annotations {
        let log = load_log(path)?;
        if log.discarded_partial > 0 {
            eprintln!("warning: {}: discarded a partial trailing record", path.display());
        }
        verdicts = merge_annotations(&verdicts, &log.records)?;
        human = log.records.len();
    }
    let out = config.output(&a.out, "verdicts.tsv");
    prepare(&out)?;
    write_verdicts(&out, &verdicts)?;
    let review = verdicts.iter().filter(|v| v.needs_review).count();
    println!(
        "{} pairs, {} annotation records applied, {} need review -> {}",
        verdicts.len(),
        human,
        review,
        out.display()
    );
    Ok(())
}

fn serve(config: AuditConfig, a: ServeArgs) -> CliResult<()> {
    let band = a.band.as_deref().map(parse_band).transpose().map_err(CliError::Usage)?;
    let verdict_path = config.output(&a.verdicts, "annotations.tsv");
    prepare(&verdict_path)?;
    let options = SessionOptions {
        filter: QueueFilter {
            band,
            unannotated_only: !a.relabel,
        },
        probe_dataset: a.probe_dataset,
        gallery_dataset: a.gallery_dataset,
        review_band: (config.policy.review_low, config.policy.review_high),
        duplicate_threshold: config.policy.tau_dup,
    };
    let session = AnnotationSession::open(&a.matches, &verdict_path, options)?;
    if session.discarded_partial() > 0 {
        eprintln!("warning: {}: discarded a partial trailing record", verdict_path.display());
    }
    let state = Arc::new(AppState {
        session: RwLock::new(session),
        config,
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .map_err(|e| CliError::Io(format!("{}: {e}", a.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("annotation service on http://{addr}, verdicts -> {}", verdict_path.display());
        axum::serve(listener, server::router(state))
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}

/// Image id -> label from a sidecar, or from the sidecar of a blob.
fn labels_from(path: &Path) -> CliResult<(HashMap<String, String>, usize)> {
    let sidecar = if path.extension().is_some_and(|e| e == "bin") {
        sidecar_of(path)
    } else {
        path.to_path_buf()
    };
    let s = read_sidecar(&sidecar)?;
    let n = s.records.len();
    Ok((s.records.into_iter().collect(), n))
}

fn distinct(labels: &HashMap<String, String>) -> usize {
    labels.values().collect::<BTreeSet<_>>().len()
}

fn overlap_report(config: &AuditConfig, a: OverlapReportArgs) -> CliResult<()> {
    let verdicts = read_verdicts(&a.verdicts)?;
    let (probe_labels, probe_count) = labels_from(&a.probes)?;
    let (gallery_labels, _) = labels_from(&a.gallery)?;
    let audited = verdicts.iter().map(|v| v.probe_id.as_str()).collect::<BTreeSet<_>>().len();
    let totals = Totals {
        test_identities: a.test_identities.unwrap_or_else(|| distinct(&probe_labels)),
        audited_images: audited,
        test_images: a.test_images.unwrap_or(probe_count),
        train_folders: a.train_folders.unwrap_or_else(|| distinct(&gallery_labels)),
    };
    let report = aggregate_overlap(&verdicts, &probe_labels, &gallery_labels, &totals, &config.policy)?;
    let out = config.output(&a.out, "overlap_report.json");
    write_text(&out, &report.to_json())?;
    if let Some(folders) = &a.folders_out {
        prepare(folders)?;
        write_labels(folders, &report.matched_train_folders)?;
    }
    println!(
        "overlapped identities {}/{}, matched folders {}/{}, duplicate images {} -> {}",
        report.overlapped_identities.count,
        report.overlapped_identities.total,
        report.matched_folders.count,
        report.matched_folders.total,
        report.duplicate_images_of_audited.count,
        out.display()
    );
    Ok(())
}

fn link_graph(config: &AuditConfig, a: LinkGraphArgs) -> CliResult<()> {
    let verdicts = read_verdicts(&a.verdicts)?;
    let (probe_labels, _) = labels_from(&a.probes)?;
    let (gallery_labels, _) = labels_from(&a.gallery)?;
    let graph = build_link_graph(&verdicts, &probe_labels, &gallery_labels)?;
    let out = config.output(&a.out, "merge_proposals.tsv");
    prepare(&out)?;
    write_groups(&out, &graph.merge_proposals)?;
    println!(
        "{} test identities linked to {} train folders; {} merge proposals covering {} surplus folders -> {}",
        graph.test_identity_count(),
        graph.train_folder_count(),
        graph.merge_proposals.len(),
        graph.surplus_folders(),
        out.display()
    );
    Ok(())
}

fn subset(config: &AuditConfig, a: SubsetArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let spec = SubsetSpec {
        variant: a.variant,
        seed: config.seed,
        overlapped_folders: a.overlapped.as_deref().map(read_labels).transpose()?.unwrap_or_default(),
        accepted_merges: a.merges.as_deref().map(read_groups).transpose()?.unwrap_or_default(),
    };
    let built = build_subset(&manifest, &spec)?;
    let out = config.output(&a.out, &format!("{}.json", a.variant.slug()));
    prepare(&out)?;
    built.manifest.save(&out)?;
    let provenance = out.with_extension("provenance.json");
    write_text(&provenance, &built.provenance.to_json())?;
    println!(
        "{}: {} folders, {} images (dropped {}, merged {}) -> {}",
        a.variant,
        built.provenance.folder_count,
        built.provenance.image_count,
        built.provenance.dropped_folders.len(),
        built.provenance.applied_merges.len(),
        out.display()
    );
    Ok(())
}

fn eval(config: &AuditConfig, a: EvalArgs) -> CliResult<()> {
    let set = load_set(&a.embeddings)?;
    let protocol = load_protocol(&a.protocol, a.strict)?;
    let report = match &a.flipped {
        Some(f) => evaluate(&set, &protocol, a.metric, Some(&load_set(f)?))?,
        None => evaluate(&l2_normalize(&set)?, &protocol, a.metric, None)?,
    };
    let text = report.to_text();
    let out = config.output(&a.out, "eval.txt");
    write_text(&out, &text)?;
    print!("{text}");
    Ok(())
}

fn bias_report(config: &AuditConfig, a: BiasReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.records).map_err(|e| CliError::Io(format!("{}: {e}", a.records.display())))?;
    let report = compute_bias(&parse_records(&text)?)?;
    let ledger = config.output(&a.out, "bias_ledger.csv");
    write_text(&ledger, &report.to_ledger())?;
    let series = config.output(&a.series, "importance_series.csv");
    write_text(&series, &series_to_csv(&importance_curve(&report)))?;
    println!(
        "{} methods -> {}, {}",
        report.methods.len(),
        ledger.display(),
        series.display()
    );
    Ok(())
}
