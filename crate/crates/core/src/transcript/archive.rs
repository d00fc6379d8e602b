//! Line-delimited archive of finished games.
//!
//! The first line is the schema header `{"schema":"mafia-record/1"}`; every
//! following line is one JSON-encoded [`GameRecord`], ordered by start time.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use super::TranscriptError;
use crate::model::GameRecord;

pub const SCHEMA: &str = "mafia-record/1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

fn header_line() -> String {
    serde_json::to_string(&Header {
        schema: SCHEMA.to_owned(),
    })
    .expect("header serializes")
}

/// Canonical single-line encoding of a record.
pub fn encode_record(record: &GameRecord) -> String {
    serde_json::to_string(record).expect("records always serialize")
}

/// Writes `records` (sorted by start time) to `path`, replacing it
/// atomically. Returns the number of records written.
pub fn save_records(records: &[GameRecord], path: impl AsRef<Path>) -> Result<usize, TranscriptError> {
    let mut sorted: Vec<&GameRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.started_at_ms);
    write_lines(path.as_ref(), sorted.iter().map(|r| encode_record(r)))?;
    Ok(sorted.len())
}

/// Reads and validates every record in an archive.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<GameRecord>, TranscriptError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    match serde_json::from_str::<Header>(&header) {
        Ok(h) if h.schema == SCHEMA => {}
        Ok(h) => return Err(TranscriptError::SchemaVersionMismatch { found: h.schema }),
        Err(_) => {
            return Err(TranscriptError::SchemaVersionMismatch {
                found: header.chars().take(60).collect(),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GameRecord = serde_json::from_str(&line).map_err(|e| TranscriptError::CorruptLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|source| TranscriptError::InvalidRecord { line: line_no, source })?;
        records.push(record);
    }
    Ok(records)
}

/// Inserts one record into an archive (creating it if needed) with a
/// write-temp-then-rename, so readers only ever see the old or new file.
pub fn append_record(path: impl AsRef<Path>, record: &GameRecord) -> Result<usize, TranscriptError> {
    let path = path.as_ref();
    let mut records = if path.exists() {
        load_records(path)?
    } else {
        Vec::new()
    };
    records.push(record.clone());
    save_records(&records, path)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), TranscriptError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        writeln!(w, "{}", header_line())?;
        for line in lines {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| TranscriptError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::small_record;
    use crate::model::GameId;

    fn records(n: usize) -> Vec<GameRecord> {
        (0..n)
            .map(|i| {
                let mut r = small_record();
                r.game_id = GameId::new(format!("g{i:02}"));
                // Reverse start order so saving must sort.
                r.started_at_ms = 1_000_000 - i as i64;
                r
            })
            .collect()
    }

    #[test]
    fn round_trip_44_games() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("games.jsonl");
        let recs = records(44);
        assert_eq!(save_records(&recs, &path).unwrap(), 44);
        let back = load_records(&path).unwrap();
        assert_eq!(back.len(), 44);
        assert_eq!(back[0].game_id.as_str(), "g43");
        let mut expected = recs.clone();
        expected.reverse();
        assert_eq!(back, expected);
        let first = fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"schema\":\"mafia-record/1\"}\n"));
    }

    #[test]
    fn truncated_last_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("games.jsonl");
        save_records(&records(3), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 20]).unwrap();
        match load_records(&path) {
            Err(TranscriptError::CorruptLine { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected corrupt line, got {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("games.jsonl");
        fs::write(&path, "{\"schema\":\"mafia-record/0\"}\n").unwrap();
        assert!(matches!(
            load_records(&path),
            Err(TranscriptError::SchemaVersionMismatch { found }) if found == "mafia-record/0"
        ));
        fs::write(&path, "").unwrap();
        assert!(matches!(load_records(&path), Err(TranscriptError::SchemaVersionMismatch { .. })));
    }

    #[test]
    fn invalid_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("games.jsonl");
        let mut bad = small_record();
        bad.utterances[1].author = crate::model::PlayerId::new("ghost");
        let body = format!("{}\n{}\n{}\n", header_line(), encode_record(&small_record()), encode_record(&bad));
        fs::write(&path, body).unwrap();
        assert!(matches!(load_records(&path), Err(TranscriptError::InvalidRecord { line: 3, .. })));
    }

    #[test]
    fn append_creates_then_extends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("games.jsonl");
        let recs = records(2);
        assert_eq!(append_record(&path, &recs[0]).unwrap(), 1);
        assert_eq!(append_record(&path, &recs[1]).unwrap(), 2);
        assert_eq!(load_records(&path).unwrap().len(), 2);
    }
}
