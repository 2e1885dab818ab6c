use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub loss_name: String,
    pub value: f64,
}

/// Per-iteration losses. Wall-clock stamps are kept separately so that two
/// runs with the same seed compare equal on [`TrainingLog::records`].
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    records: Vec<LogRecord>,
    elapsed_secs: Vec<f64>,
}

impl TrainingLog {
    pub fn push(&mut self, iteration: usize, stage: Stage, loss_name: &str, value: f64, elapsed: f64) {
        self.records.push(LogRecord {
            iteration,
            stage,
            loss_name: loss_name.to_string(),
            value,
        });
        self.elapsed_secs.push(elapsed);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn elapsed_secs(&self) -> &[f64] {
        &self.elapsed_secs
    }

    /// Values of one loss in iteration order.
    pub fn series(&self, loss_name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.loss_name == loss_name)
            .map(|r| r.value)
            .collect()
    }

    pub fn extend(&mut self, other: TrainingLog) {
        self.records.extend(other.records);
        self.elapsed_secs.extend(other.elapsed_secs);
    }

    /// CSV with header `iteration,stage,loss_name,value`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,stage,loss_name,value")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.iteration, r.stage.as_str(), r.loss_name, r.value)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

impl PartialEq for TrainingLog {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = TrainingLog::default();
        log.push(0, Stage::Stage1, "ssim_loss", 0.5, 0.1);
        log.push(0, Stage::Stage2, "d_loss", 0.25, 0.2);
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iteration,stage,loss_name,value\n0,stage1,ssim_loss,0.5\n0,stage2,d_loss,0.25\n"
        );
        assert_eq!(log.series("d_loss"), vec![0.25]);
    }
}
