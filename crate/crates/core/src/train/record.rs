//! Training log records and their newline-delimited JSON form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub disc_loss: f64,
    pub kl_per_dim: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's steps of the batch KL of each dimension.
    pub kl_per_dim: Vec<f64>,
    /// Wall-clock time; kept out of the log so reruns are byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn read_ndjson(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self::default();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                LogRecord::Step(s) => log.steps.push(s),
                LogRecord::Epoch(e) => log.epochs.push(e),
            }
        }
        Ok(log)
    }

    /// Per-dimension KL of the last epoch, if any.
    pub fn final_kl(&self) -> Option<&[f64]> {
        self.epochs.last().map(|e| e.kl_per_dim.as_slice())
    }
}

pub(crate) struct NdjsonWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl NdjsonWriter {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub(crate) fn write(&mut self, rec: &LogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
