use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScasError};

/// One line of the training metrics stream. Empty cells mark values that
/// do not apply (e.g. no critic in behavior cloning, no evaluation at this
/// step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean critic loss over the logging window.
    pub critic_loss: Option<f64>,
    /// Mean policy objective over the window's policy updates.
    pub policy_objective: Option<f64>,
    /// Mean of the batch-mean `Q(s, π(s))` over the window.
    pub mean_q: Option<f64>,
    /// Largest clipped weight seen in the window.
    pub max_weight: Option<f64>,
    pub eval_return: Option<f64>,
    pub eval_steps_out_of_ood: Option<f64>,
    /// Largest weight before clipping; kept in memory only.
    #[serde(skip)]
    pub max_raw_weight: Option<f64>,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "critic_loss",
    "policy_objective",
    "mean_q",
    "max_weight",
    "eval_return",
    "eval_steps_out_of_ood",
];

/// Append-only CSV writer; the header is written on creation and every
/// row is flushed immediately.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

fn csv_error(path: &Path, e: csv::Error) -> ScasError {
    ScasError::format(path, e.to_string())
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| ScasError::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        writer
            .write_record(METRICS_COLUMNS)
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| csv_error(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer
            .serialize(row)
            .and_then(|_| self.writer.flush().map_err(csv::Error::from))
            .map_err(|e| csv_error(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != METRICS_COLUMNS {
        return Err(ScasError::format(path, "unexpected metrics columns"));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_with_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow {
                step: 1000,
                critic_loss: Some(0.25),
                policy_objective: Some(-1.5e-3),
                mean_q: Some(-12.0),
                max_weight: Some(50.0),
                eval_return: None,
                eval_steps_out_of_ood: None,
                max_raw_weight: None,
            },
            MetricsRow {
                step: 2000,
                critic_loss: None,
                policy_objective: Some(0.1),
                mean_q: None,
                max_weight: None,
                eval_return: Some(3.0),
                eval_steps_out_of_ood: Some(7.5),
                max_raw_weight: None,
            },
        ];
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "step,critic_loss,policy_objective,mean_q,max_weight,eval_return,eval_steps_out_of_ood\n"
        ));
    }

    #[test]
    fn header_only_file_has_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        MetricsWriter::create(&path).unwrap();
        assert!(read_metrics(&path).unwrap().is_empty());
    }
}
