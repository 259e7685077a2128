//! Training and evaluation reports and heatmap files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ambipose_core::eval::EvalReport;
use ambipose_core::trainer::EpochStats;
use ambipose_core::viz::Histogram2D;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stats: EpochStats,
    /// Wall time of the epoch.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

impl TrainReport {
    /// Per-epoch loss terms and learning rate. Wall times live in
    /// [`TrainReport::timing_csv`] so this file is reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,selected_error,mean_error,kl,lr\n");
        for r in &self.epochs {
            let s = &r.stats;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.epoch, s.loss, s.selected_error, s.mean_error, s.kl, s.lr
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.6}", r.stats.epoch, r.seconds);
        }
        out
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, contents).map_err(Error::io(path))
}

pub fn eval_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes `path` as a PPM image and `path` with a `.csv` extension as the
/// raw counts. Returns the CSV path.
pub fn write_heatmap(path: &Path, hist: &Histogram2D, cell: usize) -> Result<PathBuf> {
    write_file(path, hist.to_ppm(cell)?)?;
    let csv = path.with_extension("csv");
    write_file(&csv, hist.to_csv())?;
    Ok(csv)
}
