//! On-disk layout.
//!
//! Blob: `EMB1`, u32 version (=1), u32 dim, u64 count, then `count * dim`
//! little-endian `f32` values, row-major, no padding.
//!
//! Sidecar: UTF-8 text, first line `dataset_id<TAB>dim<TAB>count`, then one
//! `image_id<TAB>identity_label` line per record in blob order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingSet;
use crate::error::{Error, Result};

pub const BLOB_MAGIC: [u8; 4] = *b"EMB1";
pub const BLOB_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 8;

/// Parsed sidecar contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub dataset_id: String,
    pub dim: usize,
    pub records: Vec<(String, String)>,
}

/// Reads a blob, returning `(dim, row-major values)`.
pub fn read_blob(path: &Path) -> Result<(usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::with_capacity(1 << 20, file);

    let mut header = [0u8; HEADER_LEN as usize];
    if file_len < HEADER_LEN {
        return Err(Error::BadHeader(format!(
            "{}: file is {file_len} bytes, shorter than the {HEADER_LEN}-byte header",
            path.display()
        )));
    }
    reader.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if header[0..4] != BLOB_MAGIC {
        return Err(Error::BadHeader(format!(
            "{}: magic {:02x?}, expected {:02x?}",
            path.display(),
            &header[0..4],
            BLOB_MAGIC
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(Error::BadHeader(format!(
            "{}: version {version}, expected {BLOB_VERSION}",
            path.display()
        )));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::BadHeader(format!("{}: dim is 0", path.display())));
    }
    let actual = file_len - HEADER_LEN;
    let expected = (dim as u64)
        .checked_mul(count)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::BadHeader(format!("{}: dim x count overflows", path.display())))?;
    if expected != actual {
        return Err(Error::PayloadLength {
            expected,
            actual,
            dim,
            count,
        });
    }

    let mut values = Vec::with_capacity((expected / 4) as usize);
    let mut buf = vec![0u8; 4 * dim as usize * 1024];
    let mut remaining = expected as usize;
    while remaining > 0 {
        let take = remaining.min(buf.len());
        reader.read_exact(&mut buf[..take]).map_err(|e| Error::io(path, e))?;
        values.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
        );
        remaining -= take;
    }
    Ok((dim as usize, values))
}

/// Writes row-major values as a blob. Values are rounded to `f32`.
pub fn write_blob(path: &Path, dim: usize, values: &[f64]) -> Result<()> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::Invalid(format!(
            "{} values do not form rows of dim {dim}",
            values.len()
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::Invalid(format!("dim {dim} exceeds u32")))?;
    let count = (values.len() / dim) as u64;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    w.write_all(&BLOB_MAGIC).map_err(io)?;
    w.write_all(&BLOB_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&dim32.to_le_bytes()).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn check_field(what: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(Error::Invalid(format!(
            "{what} {value:?} must be non-empty and free of tabs and newlines"
        )));
    }
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty sidecar")),
    };
    let fields: Vec<&str> = header.split('\t').collect();
    let [dataset_id, dim, count] = fields[..] else {
        return Err(Error::parse(path, 1, "expected dataset_id<TAB>dim<TAB>count"));
    };
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad dim {dim:?}")))?;
    let count: usize = count
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad count {count:?}")))?;

    let mut records = Vec::with_capacity(count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = n + 2;
        if line.is_empty() {
            continue;
        }
        let Some((id, label)) = line.split_once('\t') else {
            return Err(Error::parse(path, lineno, "expected image_id<TAB>identity_label"));
        };
        if label.contains('\t') {
            return Err(Error::parse(path, lineno, "too many fields"));
        }
        records.push((id.to_string(), label.to_string()));
    }
    if records.len() != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} records, found {}", records.len()),
        ));
    }
    Ok(Sidecar {
        dataset_id: dataset_id.to_string(),
        dim,
        records,
    })
}

pub fn write_sidecar(path: &Path, set: &EmbeddingSet) -> Result<()> {
    check_field("dataset id", set.dataset_id())?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}\t{}\t{}", set.dataset_id(), set.dim(), set.len()).map_err(io)?;
    for (id, label) in set.image_ids().iter().zip(set.labels()) {
        check_field("image id", id)?;
        check_field("identity label", label)?;
        writeln!(w, "{id}\t{label}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads and validates a blob/sidecar pair. Vectors are not normalized.
pub fn load_embeddings(blob_path: &Path, sidecar_path: &Path) -> Result<EmbeddingSet> {
    let (dim, values) = read_blob(blob_path)?;
    let sidecar = read_sidecar(sidecar_path)?;
    if sidecar.dim != dim {
        return Err(Error::Invalid(format!(
            "sidecar dim {} does not match blob dim {dim}",
            sidecar.dim
        )));
    }
    let count = values.len() / dim;
    if sidecar.records.len() != count {
        return Err(Error::Invalid(format!(
            "sidecar lists {} records, blob holds {count}",
            sidecar.records.len()
        )));
    }
    let (ids, labels) = sidecar.records.into_iter().unzip();
    EmbeddingSet::new(sidecar.dataset_id, dim, ids, labels, values)
}

pub fn save_embeddings(set: &EmbeddingSet, blob_path: &Path, sidecar_path: &Path) -> Result<()> {
    write_sidecar(sidecar_path, set)?;
    write_blob(blob_path, set.dim(), set.vectors())
}
