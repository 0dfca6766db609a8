use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::session::{DecisionRecord, SessionError};

/// Append-only NDJSON decision log. Every append is synced to disk before it returns.
#[derive(Debug)]
pub struct DecisionLog {
    file: File,
    path: PathBuf,
}

impl DecisionLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { file, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<(), SessionError> {
        let mut line = serde_json::to_string(record).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Records of a log file in order; a missing file is an empty log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<DecisionRecord>, SessionError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SessionError::Log { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Choice;

    #[test]
    fn append_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        assert!(read_log(&path).unwrap().is_empty());
        let recs = [
            DecisionRecord { seq: 1, spine_id: 4, choice: Choice::Shaft { shaft_id: 2 }, reviewer: "a".into(), timestamp_ms: 5 },
            DecisionRecord { seq: 2, spine_id: 4, choice: Choice::NoMatch, reviewer: "b".into(), timestamp_ms: 6 },
        ];
        let mut log = DecisionLog::open(&path).unwrap();
        for r in &recs {
            log.append(r).unwrap();
        }
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"seq":1,"spine_id":4,"decision":"shaft","shaft_id":2,"reviewer":"a","timestamp_ms":5}"#);
        assert_eq!(read_log(&path).unwrap(), recs);
        std::fs::write(&path, "{\"seq\":1}\n").unwrap();
        assert!(matches!(read_log(&path), Err(SessionError::Log { line: 1, .. })));
    }
}
