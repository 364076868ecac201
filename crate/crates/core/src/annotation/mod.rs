//! Human review of candidate pairs: verdict records, the append-only verdict
//! log, and the review queue served to annotators.

mod log;
mod session;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use log::{load as load_log, LoadedLog, VerdictLog};
pub use session::{Ack, AnnotationSession, PairDescriptor, PairFlags, Progress, QueueFilter, SessionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Same,
    Different,
    Unsure,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Same => "same",
            Verdict::Different => "different",
            Verdict::Unsure => "unsure",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Verdict::Same),
            "different" => Ok(Verdict::Different),
            "unsure" => Ok(Verdict::Unsure),
            other => Err(Error::Invalid(format!("unknown verdict {other:?}"))),
        }
    }
}

/// One human verdict on a probe/gallery pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    /// `probe_id|gallery_id`
    pub pair_id: String,
    pub verdict: Verdict,
    pub duplicate: bool,
    pub annotator: String,
    #[serde(with = "timestamp")]
    pub timestamp: DateTime<Utc>,
}

impl AnnotationRecord {
    /// Checks the duplicate rule and that text fields fit the log format.
    pub fn check(&self) -> Result<()> {
        if self.duplicate && self.verdict != Verdict::Same {
            return Err(Error::Rule(format!(
                "pair {}: duplicate requires verdict same, got {}",
                self.pair_id, self.verdict
            )));
        }
        for (what, v) in [("pair_id", &self.pair_id), ("annotator", &self.annotator)] {
            if v.is_empty() || v.contains(['\t', '\n', '\r']) {
                return Err(Error::Invalid(format!(
                    "{what} {v:?} must be non-empty and free of tabs and newlines"
                )));
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.pair_id,
            self.verdict,
            self.duplicate,
            self.annotator,
            format_timestamp(&self.timestamp)
        )
    }

    pub fn from_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        let [pair_id, verdict, duplicate, annotator, ts] = f[..] else {
            return Err(format!("expected 5 tab-separated fields, found {}", f.len()));
        };
        let verdict = verdict.parse().map_err(|e: Error| e.to_string())?;
        let duplicate = match duplicate {
            "true" => true,
            "false" => false,
            other => return Err(format!("bad duplicate flag {other:?}")),
        };
        let timestamp = parse_timestamp(ts)?;
        Ok(Self {
            pair_id: pair_id.to_string(),
            verdict,
            duplicate,
            annotator: annotator.to_string(),
            timestamp,
        })
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

mod timestamp {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}
