//! Plain CSV and JSON file formats.
//!
//! * signal: CSV `index,re,im`, one row per retained 1-based sample index
//! * observation matrix: CSV `index,snapshot,re,im`, snapshots numbered from 0
//! * instance metadata, estimates, solver configs: JSON
//! * sweep tables: CSV `variable,value,trials,mean_rsnr_db,success_rate,mean_iters,mean_wall_ms`
//! * per-trial logs: JSON lines of [`TrialRecord`]

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bench::{SweepRow, TrialRecord};
use crate::error::{Error, Result};
use crate::mmv::{MmvObservations, RowSparseEstimate};
use crate::signal::{Frequency, SpectralInstance};
use crate::solver::Estimate;

type C = Complex64;

/// Observed samples of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSamples {
    /// 1-based, strictly increasing.
    pub indices: Vec<usize>,
    pub values: Vec<C>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalRow {
    index: usize,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRow {
    index: usize,
    snapshot: usize,
    re: f64,
    im: f64,
}

fn malformed(line: u64, msg: impl Into<String>) -> Error {
    Error::Malformed { line, msg: msg.into() }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        csv::ErrorKind::Deserialize { err, .. } => malformed(line, err.to_string()),
        other => malformed(line, format!("{other:?}")),
    }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_error)?;
    if header.is_empty() {
        return Err(malformed(1, "empty file"));
    }
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(malformed(1, format!("expected header '{}', found '{}'", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

/// Reads a signal CSV. Indices must be positive and strictly increasing.
pub fn read_signal_csv<R: Read>(input: R) -> Result<SignalSamples> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["index", "re", "im"])?;
    let mut out = SignalSamples {
        indices: Vec::new(),
        values: Vec::new(),
    };
    for row in rdr.deserialize::<SignalRow>() {
        let row = row.map_err(csv_error)?;
        let line = out.indices.len() as u64 + 2;
        if row.index == 0 {
            return Err(malformed(line, "sample indices are 1-based"));
        }
        if out.indices.last().is_some_and(|&p| p >= row.index) {
            return Err(malformed(line, "sample indices must be strictly increasing"));
        }
        if !row.re.is_finite() || !row.im.is_finite() {
            return Err(malformed(line, "non-finite sample value"));
        }
        out.indices.push(row.index);
        out.values.push(C::new(row.re, row.im));
    }
    if out.indices.is_empty() {
        return Err(malformed(2, "no samples"));
    }
    Ok(out)
}

pub fn write_signal_csv<W: Write>(output: W, indices: &[usize], values: &[C]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for (&index, v) in indices.iter().zip(values) {
        w.serialize(SignalRow {
            index,
            re: v.re,
            im: v.im,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an observation-matrix CSV. Every snapshot `0..L` must list the same indices.
pub fn read_matrix_csv<R: Read>(input: R, t: Option<usize>) -> Result<MmvObservations> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["index", "snapshot", "re", "im"])?;
    let mut cols: BTreeMap<usize, Vec<(usize, C)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<MatrixRow>().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = i as u64 + 2;
        if row.index == 0 {
            return Err(malformed(line, "sample indices are 1-based"));
        }
        if !row.re.is_finite() || !row.im.is_finite() {
            return Err(malformed(line, "non-finite sample value"));
        }
        cols.entry(row.snapshot).or_default().push((row.index, C::new(row.re, row.im)));
    }
    if cols.is_empty() {
        return Err(malformed(2, "no samples"));
    }
    let l = cols.len();
    if *cols.keys().last().expect("non-empty") != l - 1 {
        return Err(malformed(0, "snapshots must be numbered 0..L without gaps"));
    }
    let mut reference: Option<Vec<usize>> = None;
    let mut y = DMatrix::zeros(0, 0);
    for (s, mut col) in cols {
        col.sort_by_key(|&(i, _)| i);
        let idx: Vec<usize> = col.iter().map(|&(i, _)| i).collect();
        match &reference {
            None => {
                y = DMatrix::zeros(idx.len(), l);
                reference = Some(idx);
            }
            Some(r) if *r != idx => {
                return Err(malformed(0, format!("snapshot {s} uses a different index set")));
            }
            _ => {}
        }
        for (r, &(_, v)) in col.iter().enumerate() {
            y[(r, s)] = v;
        }
    }
    let indices = reference.expect("non-empty");
    if indices.windows(2).any(|w| w[0] == w[1]) {
        return Err(malformed(0, "duplicate sample index within a snapshot"));
    }
    let t = t.unwrap_or(*indices.last().expect("non-empty"));
    MmvObservations::new(y, indices, t)
}

pub fn write_matrix_csv<W: Write>(output: W, indices: &[usize], y: &DMatrix<C>) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for s in 0..y.ncols() {
        for (r, &index) in indices.iter().enumerate() {
            let v = y[(r, s)];
            w.serialize(MatrixRow {
                index,
                snapshot: s,
                re: v.re,
                im: v.im,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Ground truth of a synthetic instance. Frequencies are in radians; a noiseless
/// instance has `psnr_db = null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub k: usize,
    pub t: usize,
    pub m: usize,
    pub psnr_db: Option<f64>,
    pub seed: u64,
    pub true_freqs: Vec<f64>,
    pub true_amps_re: Vec<f64>,
    pub true_amps_im: Vec<f64>,
    pub sample_indices: Vec<usize>,
}

impl From<&SpectralInstance> for InstanceMetadata {
    fn from(inst: &SpectralInstance) -> Self {
        InstanceMetadata {
            k: inst.k(),
            t: inst.t(),
            m: inst.m(),
            psnr_db: inst.psnr_db.is_finite().then_some(inst.psnr_db),
            seed: inst.seed,
            true_freqs: inst.true_freqs.iter().map(|f| f.radians()).collect(),
            true_amps_re: inst.true_amps.iter().map(|a| a.re).collect(),
            true_amps_im: inst.true_amps.iter().map(|a| a.im).collect(),
            sample_indices: inst.sample_indices.clone(),
        }
    }
}

impl InstanceMetadata {
    pub fn frequencies(&self) -> Vec<Frequency> {
        self.true_freqs.iter().map(|&w| Frequency::new(w)).collect()
    }
}

/// Unit of frequencies written to estimate files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqUnits {
    /// `ω / 2π ∈ [0, 1)`
    Cycles,
    Radians,
}

impl FreqUnits {
    pub fn convert(self, f: Frequency) -> f64 {
        match self {
            FreqUnits::Cycles => f.cycles(),
            FreqUnits::Radians => f.radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub freqs: Vec<f64>,
    pub freq_units: FreqUnits,
    pub amps_re: Vec<f64>,
    pub amps_im: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_lambda: f64,
}

impl EstimateJson {
    pub fn new(est: &Estimate, units: FreqUnits) -> Self {
        EstimateJson {
            freqs: est.freqs.iter().map(|&f| units.convert(f)).collect(),
            freq_units: units,
            amps_re: est.amps.iter().map(|a| a.re).collect(),
            amps_im: est.amps.iter().map(|a| a.im).collect(),
            objective_trace: est.objective_trace.clone(),
            iterations: est.iterations,
            final_lambda: est.final_lambda,
        }
    }
}

/// MMV estimate; `coeff_re[k][l]` is the real part of row `k`, snapshot `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSparseEstimateJson {
    pub freqs: Vec<f64>,
    pub freq_units: FreqUnits,
    pub coeff_re: Vec<Vec<f64>>,
    pub coeff_im: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_lambda: f64,
}

impl RowSparseEstimateJson {
    pub fn new(est: &RowSparseEstimate, units: FreqUnits) -> Self {
        let rows = |f: fn(&C) -> f64| -> Vec<Vec<f64>> {
            est.coeff_matrix.row_iter().map(|r| r.iter().map(f).collect()).collect()
        };
        RowSparseEstimateJson {
            freqs: est.freqs.iter().map(|&f| units.convert(f)).collect(),
            freq_units: units,
            coeff_re: rows(|c| c.re),
            coeff_im: rows(|c| c.im),
            objective_trace: est.objective_trace.clone(),
            iterations: est.iterations,
            final_lambda: est.final_lambda,
        }
    }
}

pub fn write_sweep_csv<W: Write>(output: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trial_log<W: Write>(mut output: W, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut output, r).map_err(|e| Error::Io(e.to_string()))?;
        output.write_all(b"\n")?;
    }
    Ok(())
}
