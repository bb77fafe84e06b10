use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mean_std, stages_to_criterion, theta_series, ExperimentConfig, Mode, RunRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "run",
    "seed",
    "mode",
    "t",
    "su",
    "channel",
    "jam",
    "utility",
    "payment",
    "theta_cum",
    "norm_cum_value",
];

/// One `(stage, SU)` line. SUs and channels are 1-based; channel and jam
/// are 0 when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run: u32,
    pub seed: u64,
    pub mode: Mode,
    pub t: u64,
    pub su: usize,
    pub channel: usize,
    pub jam: usize,
    pub utility: i64,
    pub payment: f64,
    pub theta_cum: f64,
    pub norm_cum_value: f64,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn rows(record: &RunRecord) -> impl Iterator<Item = CsvRow> + '_ {
    let utility = record.stage_utility();
    let theta = theta_series(&utility, record.sus);
    let norm = record.norm_cum_value();
    record.stages.iter().enumerate().flat_map(move |(t, s)| {
        let (theta_cum, norm_cum_value) = (theta[t], norm[t]);
        (0..record.sus).map(move |i| CsvRow {
            run: record.run,
            seed: record.seed,
            mode: record.mode,
            t: t as u64,
            su: i + 1,
            channel: s.allocation[i].map_or(0, |c| c + 1),
            jam: s.jam.map_or(0, |c| c + 1),
            utility: s.utility[i],
            payment: s.payment[i],
            theta_cum,
            norm_cum_value,
        })
    })
}

/// Write one record as CSV.
pub fn write_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for row in rows(record) {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Write `config.json` and one `run_<r>.csv` per record into `dir`.
/// Returns the CSV paths.
pub fn emit(cfg: &ExperimentConfig, records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(cfg)? + "\n";
    fs::write(&config_path, json).map_err(io_err(&config_path))?;
    records
        .iter()
        .map(|r| {
            let path = dir.join(format!("run_{:03}.csv", r.run));
            write_csv(r, &path)?;
            Ok(path)
        })
        .collect()
}

/// Aggregate line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub param: String,
    pub value: String,
    pub mode: Mode,
    pub replications: usize,
    pub horizon: u64,
    pub theta_per_stage_mean: f64,
    pub theta_per_stage_std: f64,
    /// Stages until the normalized cumulative value stays within 1% of its end value.
    pub stages_to_criterion_mean: f64,
    pub stages_to_criterion_std: f64,
}

impl SummaryRow {
    pub fn new(cfg: &ExperimentConfig, param: &str, value: &str, records: &[RunRecord]) -> Self {
        let per_stage: Vec<f64> = records.iter().map(RunRecord::theta_per_stage).collect();
        let (mean, std) = mean_std(&per_stage);
        let settle: Vec<f64> = records
            .iter()
            .filter_map(|r| stages_to_criterion(&r.norm_cum_value(), 0.01))
            .map(|s| s as f64)
            .collect();
        let (settle_mean, settle_std) = mean_std(&settle);
        Self {
            config_hash: cfg.hash(),
            param: param.to_string(),
            value: value.to_string(),
            mode: cfg.mode,
            replications: records.len(),
            horizon: cfg.horizon,
            theta_per_stage_mean: mean,
            theta_per_stage_std: std,
            stages_to_criterion_mean: settle_mean,
            stages_to_criterion_std: settle_std,
        }
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
