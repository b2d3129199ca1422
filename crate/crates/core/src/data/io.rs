use std::fs;
use std::io::BufRead;
use std::path::Path;

use super::PairRecord;
use crate::error::{Error, Result};

/// Parses a pairs JSONL stream and validates every record.
pub fn parse_pairs<R: BufRead>(reader: R) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        rec.table.id = rec.id.clone();
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(std::io::BufReader::new(file))
}

/// Canonical JSONL: schema key order, compact, one record per line.
pub fn to_jsonl(records: &[PairRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}
