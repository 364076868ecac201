//! Run configuration. Precedence: command-line flags, then the `--config`
//! TOML file, then `LEAKAGE_AUDIT_HOME` for image roots not set elsewhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use leakage_audit::overlap::ThresholdPolicy;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const HOME_VAR: &str = "LEAKAGE_AUDIT_HOME";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub policy: PolicyFile,
    /// Image root per dataset id.
    #[serde(default)]
    pub roots: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub tau_dup: Option<f64>,
    pub tau_id: Option<f64>,
    pub review_low: Option<f64>,
    pub review_high: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line; `None` defers to the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub policy: [Option<f64>; 4],
    pub roots: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub roots: BTreeMap<String, PathBuf>,
    pub home: Option<PathBuf>,
    pub policy: ThresholdPolicy,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl AuditConfig {
    pub fn resolve(file: Option<ConfigFile>, flags: &Overrides, home: Option<PathBuf>) -> CliResult<Self> {
        let file = file.unwrap_or_default();
        let d = ThresholdPolicy::default();
        let [tau_dup, tau_id, review_low, review_high] = flags.policy;
        let policy = ThresholdPolicy {
            tau_dup: tau_dup.or(file.policy.tau_dup).unwrap_or(d.tau_dup),
            tau_id: tau_id.or(file.policy.tau_id).unwrap_or(d.tau_id),
            review_low: review_low.or(file.policy.review_low).unwrap_or(d.review_low),
            review_high: review_high.or(file.policy.review_high).unwrap_or(d.review_high),
        };
        policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let workers = flags
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
        if workers == 0 {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        let mut roots = file.roots;
        roots.extend(flags.roots.clone());
        Ok(Self {
            roots,
            home,
            policy,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out_dir: flags.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
            workers,
        })
    }

    /// Configured root, else `$LEAKAGE_AUDIT_HOME/images/<dataset>`.
    pub fn image_root(&self, dataset: &str) -> Option<PathBuf> {
        self.roots
            .get(dataset)
            .cloned()
            .or_else(|| self.home.as_ref().map(|h| h.join("images").join(dataset)))
    }

    /// `explicit` if given, else `name` inside the output directory.
    pub fn output(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(name))
    }
}

/// Parses `DATASET=DIR`.
pub fn parse_root(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected DATASET=DIR, got {s:?}")),
    }
}
