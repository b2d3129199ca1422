use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::error::{Error, Result};

/// One line of the verdict log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub verdict: Verdict,
}

/// Append-only JSONL verdict log. Each append is fsynced before it returns.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl VerdictLog {
    /// Opens or creates the log and returns its complete entries. A torn
    /// final line (no terminating newline) is discarded and truncated away.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<LogEntry>)> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            log::warn!("{}: dropping torn tail of {} bytes", path.display(), bytes.len() - complete);
            file.set_len(complete as u64).map_err(|e| Error::io(&path, e))?;
            file.sync_all().map_err(|e| Error::io(&path, e))?;
        }
        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&path, e))?;
        let entries = parse_entries(&bytes[..complete])?;
        let next_seq = entries.last().map_or(1, |e| e.seq + 1);
        Ok((VerdictLog { path, file, next_seq }, entries))
    }

    /// Complete entries of the log at `path`, without creating, repairing
    /// or locking it.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        parse_entries(&bytes[..complete])
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, verdict: &Verdict) -> Result<u64> {
        let entry = LogEntry { seq: self.next_seq, verdict: verdict.clone() };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.next_seq += 1;
        Ok(entry.seq)
    }
}

fn parse_entries(bytes: &[u8]) -> Result<Vec<LogEntry>> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::Parse { line: 0, message: format!("log is not UTF-8: {e}") })?;
    let mut entries: Vec<LogEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if let Some(prev) = entries.last() {
            if entry.seq <= prev.seq {
                return Err(Error::Parse { line: i + 1, message: format!("sequence {} after {}", entry.seq, prev.seq) });
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}
