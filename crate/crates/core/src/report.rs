//! Optimistic-bias ledger: accuracy with an identity-overlapped training set
//! minus accuracy with an identity-disjoint one, per method and test set.
//!
//! Accuracies are exact decimal percentages. Per-row averages are rounded to
//! two decimals (half away from zero) before differencing, the way published
//! tables report them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// A percentage in thousandths of a point: `Pct(99_780)` is 99.78%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct Pct(pub i64);

impl Pct {
    pub fn from_f64(v: f64) -> Self {
        Pct((v * 1000.0).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Mean rounded to hundredths, half away from zero.
    pub fn mean_to_hundredths(values: &[Pct]) -> Pct {
        let sum: i64 = values.iter().map(|v| v.0).sum();
        let den = 10 * values.len() as i64;
        let q = (2 * sum.abs() + den) / (2 * den);
        Pct(sum.signum() * q * 10)
    }

    /// Fixed-point text with `decimals` places (1..=3), rounding half away from zero.
    pub fn format(self, decimals: u32) -> String {
        let step = 10i64.pow(3 - decimals);
        let mag = (self.0.abs() + step / 2) / step;
        let sign = if self.0 < 0 && mag != 0 { "-" } else { "" };
        let scale = 10i64.pow(decimals);
        format!(
            "{sign}{}.{:0width$}",
            mag / scale,
            mag % scale,
            width = decimals as usize
        )
    }
}

impl fmt::Display for Pct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(if self.0 % 10 == 0 { 2 } else { 3 }))
    }
}

impl FromStr for Pct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad percentage {s:?}"));
        let t = s.trim();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() || frac.len() > 3 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: i64 = int.parse().map_err(|_| bad())?;
        let frac_val: i64 = format!("{frac:0<3}").parse().map_err(|_| bad())?;
        let v = int * 1000 + frac_val;
        Ok(Pct(if neg { -v } else { v }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TrainingVariant {
    Disjoint,
    OverlapR,
    OverlapC,
    Other(String),
}

impl TrainingVariant {
    pub fn name(&self) -> &str {
        match self {
            TrainingVariant::Disjoint => "ID-Disjoint",
            TrainingVariant::OverlapR => "ID-Overlap-R",
            TrainingVariant::OverlapC => "ID-Overlap-C",
            TrainingVariant::Other(s) => s,
        }
    }
}

impl From<&str> for TrainingVariant {
    fn from(s: &str) -> Self {
        match s.trim() {
            "ID-Disjoint" => TrainingVariant::Disjoint,
            "ID-Overlap-R" => TrainingVariant::OverlapR,
            "ID-Overlap-C" => TrainingVariant::OverlapC,
            other => TrainingVariant::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccuracyRecord {
    pub method: String,
    pub variant: TrainingVariant,
    pub test_set: String,
    pub accuracy: Pct,
}

impl AccuracyRecord {
    pub fn new(method: &str, variant: &str, test_set: &str, accuracy: &str) -> Result<Self> {
        let accuracy: Pct = accuracy.parse()?;
        if !(0..=100_000).contains(&accuracy.0) {
            return Err(Error::Invalid(format!("accuracy {accuracy} outside [0, 100]")));
        }
        Ok(Self {
            method: method.trim().to_string(),
            variant: variant.into(),
            test_set: test_set.trim().to_string(),
            accuracy,
        })
    }
}

/// Parses `method,variant,test_set,accuracy` lines. A header line and `#`
/// comments are skipped; the method name may itself contain commas.
pub fn parse_records(text: &str) -> Result<Vec<AccuracyRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("method,")) {
            continue;
        }
        let mut parts = line.rsplitn(4, ',');
        let (Some(acc), Some(test_set), Some(variant), Some(method)) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Invalid(format!("line {}: expected method,variant,test_set,accuracy", n + 1)));
        };
        out.push(
            AccuracyRecord::new(method, variant, test_set, acc)
                .map_err(|e| Error::Invalid(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BiasCell {
    pub test_set: String,
    pub acc_overlap_c: Pct,
    pub acc_disjoint: Pct,
    /// `acc_overlap_c - acc_disjoint`
    pub importance: Pct,
    /// `(acc_overlap_c + acc_disjoint) / 2`; lower means harder.
    pub difficulty: Pct,
}

impl BiasCell {
    fn new(test_set: &str, overlap_c: Pct, disjoint: Pct) -> Self {
        Self {
            test_set: test_set.to_string(),
            acc_overlap_c: overlap_c,
            acc_disjoint: disjoint,
            importance: Pct(overlap_c.0 - disjoint.0),
            // Inputs carry at most 3 decimals; halving can need a 4th, which
            // is rounded away from zero.
            difficulty: Pct((overlap_c.0 + disjoint.0 + (overlap_c.0 + disjoint.0).signum()) / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MethodBias {
    pub method: String,
    pub cells: Vec<BiasCell>,
    pub avg_overlap_c: Pct,
    pub avg_disjoint: Pct,
    /// `avg_overlap_c - avg_disjoint`
    pub row_bias: Pct,
}

impl MethodBias {
    fn new(method: &str, cells: Vec<BiasCell>) -> Self {
        let oc: Vec<Pct> = cells.iter().map(|c| c.acc_overlap_c).collect();
        let dj: Vec<Pct> = cells.iter().map(|c| c.acc_disjoint).collect();
        let avg_overlap_c = Pct::mean_to_hundredths(&oc);
        let avg_disjoint = Pct::mean_to_hundredths(&dj);
        Self {
            method: method.to_string(),
            cells,
            avg_overlap_c,
            avg_disjoint,
            row_bias: Pct(avg_overlap_c.0 - avg_disjoint.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BiasReport {
    /// Methods in lexicographic order, each with test sets in lexicographic order.
    pub methods: Vec<MethodBias>,
    /// Per test set, the across-method mean of each variant (rounded to hundredths).
    pub across_methods: MethodBias,
}

pub const ACROSS_METHODS: &str = "ALL-METHODS";

/// `(overlap_c, disjoint)` accuracies of one method on one test set.
type Pair = (Option<Pct>, Option<Pct>);

pub fn compute_bias(records: &[AccuracyRecord]) -> Result<BiasReport> {
    let mut table: BTreeMap<(&str, &str), Pair> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((&r.method, &r.variant, &r.test_set)) {
            return Err(Error::Invalid(format!(
                "duplicate record for {} / {} / {}",
                r.method,
                r.variant.name(),
                r.test_set
            )));
        }
        let slot = table.entry((&r.method, &r.test_set)).or_default();
        match r.variant {
            TrainingVariant::OverlapC => slot.0 = Some(r.accuracy),
            TrainingVariant::Disjoint => slot.1 = Some(r.accuracy),
            _ => {}
        }
    }

    let mut per_method: BTreeMap<&str, Vec<BiasCell>> = BTreeMap::new();
    for ((method, test_set), (oc, dj)) in table {
        match (oc, dj) {
            (Some(oc), Some(dj)) => per_method.entry(method).or_default().push(BiasCell::new(test_set, oc, dj)),
            (None, None) => {}
            (None, Some(_)) => {
                return Err(Error::MissingRecord(format!("{method} / {test_set}: no ID-Overlap-C accuracy")))
            }
            (Some(_), None) => {
                return Err(Error::MissingRecord(format!("{method} / {test_set}: no ID-Disjoint accuracy")))
            }
        }
    }
    if per_method.is_empty() {
        return Err(Error::MissingRecord("no method has both ID-Overlap-C and ID-Disjoint records".into()));
    }

    let mut by_test: BTreeMap<&str, (Vec<Pct>, Vec<Pct>)> = BTreeMap::new();
    for cells in per_method.values() {
        for c in cells {
            let e = by_test.entry(c.test_set.as_str()).or_default();
            e.0.push(c.acc_overlap_c);
            e.1.push(c.acc_disjoint);
        }
    }
    let across_cells = by_test
        .into_iter()
        .map(|(t, (oc, dj))| BiasCell::new(t, Pct::mean_to_hundredths(&oc), Pct::mean_to_hundredths(&dj)))
        .collect();

    Ok(BiasReport {
        methods: per_method.into_iter().map(|(m, cells)| MethodBias::new(m, cells)).collect(),
        across_methods: MethodBias::new(ACROSS_METHODS, across_cells),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurvePoint {
    pub test_set: String,
    pub difficulty: Pct,
    pub importance: Pct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImportanceSeries {
    pub method: String,
    pub points: Vec<CurvePoint>,
}

/// Per method, one `(difficulty, importance)` point per test set, sorted by
/// ascending difficulty (hardest first); equal difficulties by test set name.
pub fn importance_curve(report: &BiasReport) -> Vec<ImportanceSeries> {
    report
        .methods
        .iter()
        .map(|m| {
            let mut points: Vec<CurvePoint> = m
                .cells
                .iter()
                .map(|c| CurvePoint {
                    test_set: c.test_set.clone(),
                    difficulty: c.difficulty,
                    importance: c.importance,
                })
                .collect();
            points.sort_by(|a, b| a.difficulty.cmp(&b.difficulty).then_with(|| a.test_set.cmp(&b.test_set)));
            ImportanceSeries {
                method: m.method.clone(),
                points,
            }
        })
        .collect()
}

impl BiasReport {
    /// `method,test_set,acc_overlap_c,acc_disjoint,importance,difficulty`, with
    /// an `AVG` row per method whose importance column is the row bias.
    pub fn to_ledger(&self) -> String {
        let mut s = String::from("method,test_set,acc_overlap_c,acc_disjoint,importance,difficulty\n");
        for m in self.methods.iter().chain(std::iter::once(&self.across_methods)) {
            for c in &m.cells {
                writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    m.method,
                    c.test_set,
                    c.acc_overlap_c.format(2),
                    c.acc_disjoint.format(2),
                    c.importance.format(2),
                    c.difficulty.format(3)
                )
                .unwrap();
            }
            writeln!(
                s,
                "{},AVG,{},{},{},",
                m.method,
                m.avg_overlap_c.format(2),
                m.avg_disjoint.format(2),
                m.row_bias.format(2)
            )
            .unwrap();
        }
        s
    }
}

/// `method,test_set,difficulty,importance`
pub fn series_to_csv(series: &[ImportanceSeries]) -> String {
    let mut s = String::from("method,test_set,difficulty,importance\n");
    for m in series {
        for p in &m.points {
            writeln!(s, "{},{},{},{}", m.method, p.test_set, p.difficulty.format(3), p.importance.format(2)).unwrap();
        }
    }
    s
}
