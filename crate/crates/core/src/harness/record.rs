use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::assist::Strategy;
use crate::env::TerminalKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    EvalAssisted,
    EvalUnassisted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::EvalAssisted => "eval_assisted",
            Mode::EvalUnassisted => "eval_unassisted",
        }
    }
}

/// One episode. Evaluation records carry the number of training episodes completed
/// when the round ran. Human sessions write the same schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub strategy: Strategy,
    pub episode: usize,
    pub mode: Mode,
    #[serde(rename = "return")]
    pub ret: f64,
    pub terminal_kind: TerminalKind,
    pub steps: usize,
    pub collisions: usize,
    /// Empty when wallclock recording is off.
    pub wallclock_ms: Option<u64>,
}

impl ExperimentRecord {
    pub fn crashed(&self) -> bool {
        self.terminal_kind == TerminalKind::Crash
    }

    pub fn succeeded(&self) -> bool {
        self.terminal_kind == TerminalKind::Success
    }
}

/// Append-only CSV sink, flushed after every record.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl RecordWriter<File> {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self::new(File::create(path)?))
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        Self { inner: csv::Writer::from_writer(out) }
    }

    pub fn append(&mut self, rec: &ExperimentRecord) -> Result<(), HarnessError> {
        self.inner.serialize(rec)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, HarnessError> {
        self.inner.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<Result<Vec<ExperimentRecord>, _>>()?)
}

/// Every `records.csv` below `dir`, in sorted path order.
pub fn read_records_dir(dir: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_records(&f)?);
    }
    Ok(out)
}

fn collect(dir: &Path, files: &mut Vec<std::path::PathBuf>) -> Result<(), HarnessError> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, files)?;
        } else if path.file_name().is_some_and(|n| n == "records.csv") {
            files.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(mode: Mode, ret: f64, kind: TerminalKind) -> ExperimentRecord {
        ExperimentRecord {
            seed: 1,
            strategy: Strategy::Psn,
            episode: 30,
            mode,
            ret,
            terminal_kind: kind,
            steps: 12,
            collisions: usize::from(kind == TerminalKind::Crash),
            wallclock_ms: None,
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut w = RecordWriter::new(Vec::new());
        let a = rec(Mode::Train, -10.5, TerminalKind::Crash);
        let b = rec(Mode::EvalUnassisted, 8.25, TerminalKind::Success);
        w.append(&a).unwrap();
        w.append(&b).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.starts_with("seed,strategy,episode,mode,return,terminal_kind,steps,collisions,wallclock_ms\n"));
        assert!(text.contains("1,psn,30,train,-10.5,crash,12,1,\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/records.csv");
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_records_dir(dir.path()).unwrap(), vec![a, b]);
    }
}
