use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::AnnotationRecord;
use crate::error::{Error, Result};

/// Contents of a verdict file as recovered from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedLog {
    /// Complete records in file order.
    pub records: Vec<AnnotationRecord>,
    /// Trailing partial lines dropped (0 or 1).
    pub discarded_partial: usize,
    /// Byte length of the complete-record prefix.
    pub valid_len: u64,
}

/// Parses a verdict file. A final line without its newline is a torn write
/// and is discarded; any other malformed line is an error.
pub fn load(path: &Path) -> Result<LoadedLog> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LoadedLog::default()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    let discarded_partial = usize::from(complete < bytes.len());
    let text = std::str::from_utf8(&bytes[..complete])
        .map_err(|e| Error::parse(path, 0, format!("verdict file is not UTF-8: {e}")))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let record = AnnotationRecord::from_line(line).map_err(|m| Error::parse(path, n + 1, m))?;
        records.push(record);
    }
    Ok(LoadedLog {
        records,
        discarded_partial,
        valid_len: complete as u64,
    })
}

/// Append-only verdict file with a single writer.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    file: File,
}

impl VerdictLog {
    /// Opens (creating if needed) for appending, cutting off any torn tail first.
    pub fn open(path: &Path) -> Result<(Self, LoadedLog)> {
        let loaded = load(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if loaded.discarded_partial > 0 {
            file.set_len(loaded.valid_len).map_err(|e| Error::io(path, e))?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            loaded,
        ))
    }

    /// Returns only after the record has reached the disk.
    pub fn append(&mut self, record: &AnnotationRecord) -> Result<()> {
        let mut line = record.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{parse_timestamp, Verdict};

    fn rec(i: usize) -> AnnotationRecord {
        AnnotationRecord {
            pair_id: format!("p{i}|g{i}"),
            verdict: Verdict::Same,
            duplicate: false,
            annotator: "a".into(),
            timestamp: parse_timestamp("2024-01-01T00:00:00Z").unwrap(),
        }
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load(&dir.path().join("none.tsv")).unwrap();
        assert!(loaded.records.is_empty());
    }

    #[test]
    fn torn_tail_recovered_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tsv");
        {
            let (mut log, _) = VerdictLog::open(&path).unwrap();
            for i in 0..3 {
                log.append(&rec(i)).unwrap();
            }
        }
        let mut bytes = std::fs::read(&path).unwrap();
        let full = bytes.len();
        bytes.truncate(full - 5);
        std::fs::write(&path, &bytes).unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.discarded_partial, 1);

        let (mut log, loaded) = VerdictLog::open(&path).unwrap();
        assert_eq!(loaded.discarded_partial, 1);
        log.append(&rec(7)).unwrap();
        let again = load(&path).unwrap();
        assert_eq!(again.discarded_partial, 0);
        assert_eq!(again.records, vec![rec(0), rec(1), rec(7)]);
    }

    #[test]
    fn corrupt_middle_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tsv");
        std::fs::write(&path, format!("garbage\n{}\n", rec(0).to_line())).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { line: 1, .. })));
    }
}
