//! JSON and CSV report files.
//!
//! JSON carries the full document and parses back to an equal value. CSV
//! carries the per-checkpoint curves (one row per checkpoint) for plotting.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certify::CertificationReport;
use crate::driver::{BatchCheckpoint, BatchReport, Checkpoint, RunConfig, ScreeningRun};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects CSV; anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Everything produced by one screening run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub shape: (usize, usize),
    pub certification: CertificationReport,
    pub safe_certified_at: Option<usize>,
    pub positive_optimum_at: Option<usize>,
    pub iterations_run: usize,
    pub eliminated: Vec<usize>,
    pub x_hat: Vec<f64>,
    pub nu_hat: Option<Vec<f64>>,
    pub checkpoints: Vec<Checkpoint>,
}

impl RunReport {
    pub fn from_run(run: &ScreeningRun, config: &RunConfig, shape: (usize, usize)) -> Self {
        Self {
            config: config.clone(),
            shape,
            certification: run.report.clone(),
            safe_certified_at: run.safe_certified_at,
            positive_optimum_at: run.positive_optimum_at,
            iterations_run: run.trace.iterations_run,
            eliminated: run
                .eliminated
                .iter()
                .enumerate()
                .filter_map(|(i, &e)| e.then_some(i))
                .collect(),
            x_hat: run.trace.final_x.as_slice().to_vec(),
            nu_hat: run.final_pair.as_ref().map(|p| p.nu.as_slice().to_vec()),
            checkpoints: run.checkpoints.clone(),
        }
    }
}

/// A document that can be written as JSON or as CSV rows.
pub trait Report: Serialize + DeserializeOwned {
    fn write_csv<W: Write>(&self, writer: W) -> Result<()>;
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

impl Report for RunReport {
    fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.checkpoints)
    }
}

impl Report for BatchReport {
    fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.checkpoints)
    }
}

#[derive(Serialize)]
struct CertificationRow<'a> {
    unique: bool,
    method: &'a crate::certify::CertificationMethod,
    r: usize,
    reduced_rows: usize,
    reduced_cols: usize,
    sigma_min: Option<f64>,
    distance_bound: Option<f64>,
    gap: f64,
    iterations: Option<usize>,
    positive_optimum: bool,
}

impl Report for CertificationReport {
    fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(
            writer,
            &[CertificationRow {
                unique: self.unique,
                method: &self.method,
                r: self.r,
                reduced_rows: self.reduced_shape.0,
                reduced_cols: self.reduced_shape.1,
                sigma_min: self.sigma_min,
                distance_bound: self.distance_bound,
                gap: self.gap,
                iterations: self.iterations,
                positive_optimum: self.positive_optimum,
            }],
        )
    }
}

pub fn to_json<R: Report>(report: &R) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json<R: Report>(text: &str) -> Result<R> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_report<R: Report>(report: &R, path: &Path, format: ReportFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => {
            w.write_all(to_json(report)?.as_bytes())?;
            w.write_all(b"\n")?;
        }
        ReportFormat::Csv => report.write_csv(&mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Report>(path: &Path) -> Result<R> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    from_json(&s)
}

/// Parses the CSV curves written for a run.
pub fn read_checkpoints_csv<Rd: Read>(reader: Rd) -> Result<Vec<Checkpoint>> {
    read_rows(reader)
}

/// Parses the CSV aggregates written for a batch.
pub fn read_batch_checkpoints_csv<Rd: Read>(reader: Rd) -> Result<Vec<BatchCheckpoint>> {
    read_rows(reader)
}

fn read_rows<Rd: Read, T: DeserializeOwned>(reader: Rd) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
