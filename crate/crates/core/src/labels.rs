//! Append-only review labels, one JSON record per line. The last record
//! for a candidate is its active label.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Barn,
    FalsePositive,
}

impl Label {
    /// Class index in the filter model: false positive 0, barn 1.
    pub fn class(self) -> usize {
        match self {
            Label::FalsePositive => 0,
            Label::Barn => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub candidate_id: u64,
    pub label: Label,
    #[serde(default)]
    pub annotator: String,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp_ms: u64,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Appends one record and syncs it to disk before returning.
pub fn append_label(path: &Path, rec: &LabelRecord) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(rec).expect("label serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str) -> std::result::Result<Vec<LabelRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// All records in file order; a missing file has none.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    match std::fs::read_to_string(path) {
        Ok(s) => parse_labels(&s).map_err(|m| Error::parse(path, m)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Latest label per candidate.
pub fn active_labels(records: &[LabelRecord]) -> BTreeMap<u64, Label> {
    records.iter().map(|r| (r.candidate_id, r.label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_wins_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        assert!(read_labels(&p).unwrap().is_empty());
        let rec = |id, label| LabelRecord {
            candidate_id: id,
            label,
            annotator: "a".into(),
            timestamp_ms: 1,
        };
        append_label(&p, &rec(4, Label::Barn)).unwrap();
        append_label(&p, &rec(2, Label::Barn)).unwrap();
        append_label(&p, &rec(4, Label::FalsePositive)).unwrap();
        let all = read_labels(&p).unwrap();
        assert_eq!(all.len(), 3);
        let active = active_labels(&all);
        assert_eq!(active[&4], Label::FalsePositive);
        assert_eq!(active.len(), 2);
        std::fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Parse { .. })));
    }
}
