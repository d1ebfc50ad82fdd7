//! Per-epoch metric log, serialized as CSV.

use crate::dataset::Split;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const METRICS_HEADER: &str = "epoch,split,loss_main,loss_shortcut,cer,wer,lr,wall_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: Split,
    pub loss_main: f64,
    /// Absent when the shortcut branch takes no part in the loss.
    pub loss_shortcut: Option<f64>,
    pub cer: f64,
    pub wer: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new() -> Self {
        MetricLog { rows: Vec::new() }
    }

    /// Appends a row; at most one row per `(epoch, split)`.
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if self.rows.iter().any(|r| r.epoch == row.epoch && r.split == row.split) {
            return Err(Error::config(format!(
                "duplicate metric row for epoch {} split {}",
                row.epoch, row.split
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let shortcut = r.loss_shortcut.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.split, r.loss_main, shortcut, r.cer, r.wer, r.lr, r.wall_seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the CSV serialization.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_csv().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, split: Split) -> MetricRow {
        MetricRow {
            epoch,
            split,
            loss_main: 1.5,
            loss_shortcut: Some(2.25),
            cer: 10.0,
            wer: 20.0,
            lr: 0.001,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn rejects_duplicate_epoch_split() {
        let mut log = MetricLog::new();
        log.push(row(0, Split::Train)).unwrap();
        log.push(row(0, Split::Val)).unwrap();
        log.push(row(1, Split::Train)).unwrap();
        assert!(log.push(row(0, Split::Train)).is_err());
    }

    #[test]
    fn csv_shape_and_empty_shortcut_field() {
        let mut log = MetricLog::new();
        let mut r = row(0, Split::Train);
        r.loss_shortcut = None;
        log.push(r).unwrap();
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.next().unwrap(), "0,train,1.5,,10,20,0.001,0");
    }

    #[test]
    fn digest_tracks_content() {
        let mut a = MetricLog::new();
        let mut b = MetricLog::new();
        a.push(row(0, Split::Train)).unwrap();
        b.push(row(0, Split::Train)).unwrap();
        assert_eq!(a.digest(), b.digest());
        b.push(row(1, Split::Train)).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
