//! Monte Carlo trials, parameter sweeps and segmented reconstruction of long signals.
//!
//! Trial `i` of a sweep is seeded with `base_seed + i` at every swept value, so adjacent
//! points of a sweep see the same random draws wherever the instance shape allows.

use std::f64::consts::TAU;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{match_frequencies, rsnr, SUCCESS_FREQ_TOL};
use crate::signal::{draw_sample_indices, noise_variance_for_psnr, random_instance, seeded_rng, synthesize, two_tone_instance, Frequency};
use crate::solver::{run_sure_ir, SolverConfig};

type C = Complex64;

/// Default number of trials per sweep value.
pub const DEFAULT_TRIALS: usize = 100;

/// Trials per value under `--full`.
pub const FULL_TRIALS: usize = 1000;

/// Shape of one synthetic trial. With `spacing_mu` set the instance is a two-tone pair
/// separated by `spacing_mu / t` cycles and `k` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialParams {
    pub k: usize,
    pub t: usize,
    pub m: usize,
    /// `+∞` (or absent in JSON as `null`) means noiseless.
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub spacing_mu: Option<f64>,
}

impl Default for TrialParams {
    fn default() -> Self {
        TrialParams {
            k: 3,
            t: 64,
            m: 30,
            psnr_db: 25.0,
            spacing_mu: None,
        }
    }
}

/// JSON has no infinity; noiseless is written as `null`.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl TrialParams {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.m == 0 || self.m > self.t {
            return Err(Error::invalid(format!("need 1 <= m <= t, got m={}, t={}", self.m, self.t)));
        }
        match self.spacing_mu {
            Some(mu) if !(mu > 0.0) || !mu.is_finite() => Err(Error::invalid("spacing_mu must be positive")),
            None if self.k == 0 => Err(Error::invalid("k must be at least 1")),
            _ if self.psnr_db.is_nan() => Err(Error::invalid("psnr must not be NaN")),
            _ => Ok(()),
        }
    }

    fn k_true(&self) -> usize {
        if self.spacing_mu.is_some() {
            2
        } else {
            self.k
        }
    }
}

/// Metrics of one solver run. `success ⇒ k_est = k_true ∧ freq_err ≤ 1e-3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub k_true: usize,
    pub k_est: usize,
    pub m: usize,
    pub t: usize,
    #[serde(serialize_with = "psnr_serde::serialize")]
    pub psnr_db: f64,
    pub rsnr_db: f64,
    pub success: bool,
    /// Cycles; `None` when the model orders differ.
    pub freq_err: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Present when the solver stopped with an error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Generates the instance for `(params, seed)`, runs the solver and scores it.
///
/// A numerical solver failure is recorded as an unsuccessful trial scored against the
/// zero reconstruction (0 dB).
pub fn run_trial(params: &TrialParams, seed: u64, config: &SolverConfig) -> Result<TrialRecord> {
    params.validate()?;
    let inst = match params.spacing_mu {
        Some(mu) => two_tone_instance(mu, params.t, params.m, params.psnr_db, seed)?,
        None => random_instance(params.k, params.t, params.m, params.psnr_db, seed)?,
    };
    let start = Instant::now();
    let outcome = run_sure_ir(&inst.observations, &inst.sample_indices, config);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut record = TrialRecord {
        seed,
        k_true: params.k_true(),
        k_est: 0,
        m: params.m,
        t: params.t,
        psnr_db: params.psnr_db,
        rsnr_db: 0.0,
        success: false,
        freq_err: None,
        iterations: 0,
        wall_ms,
        failure: None,
    };
    match outcome {
        Ok(est) => {
            let err = match_frequencies(&inst.true_freqs, &est.freqs);
            record.k_est = est.model_order();
            record.rsnr_db = rsnr(&inst.full_signal, &est.reconstruct(params.t))?;
            record.freq_err = err.is_finite().then_some(err);
            record.success = err <= SUCCESS_FREQ_TOL;
            record.iterations = est.iterations;
        }
        Err(e @ Error::SolverFailure { .. }) => record.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// The swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    M,
    K,
    PsnrDb,
    SpacingMu,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::M => "m",
            SweepVariable::K => "k",
            SweepVariable::PsnrDb => "psnr_db",
            SweepVariable::SpacingMu => "spacing_mu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(SweepVariable::M),
            "k" => Ok(SweepVariable::K),
            "psnr_db" | "psnr" => Ok(SweepVariable::PsnrDb),
            "spacing_mu" | "mu" => Ok(SweepVariable::SpacingMu),
            other => Err(Error::invalid(format!(
                "unknown sweep variable '{other}'; expected m, k, psnr_db or spacing_mu"
            ))),
        }
    }

    fn apply(self, fixed: &TrialParams, value: f64) -> Result<TrialParams> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("{} must be a positive integer, got {v}", self.name())))
            }
        };
        let mut p = fixed.clone();
        match self {
            SweepVariable::M => p.m = count(value)?,
            SweepVariable::K => p.k = count(value)?,
            SweepVariable::PsnrDb => p.psnr_db = value,
            SweepVariable::SpacingMu => p.spacing_mu = Some(value),
        }
        p.validate()?;
        Ok(p)
    }
}

/// One experiment axis: `trials` runs at each of `values`, everything else from `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default)]
    pub fixed: TrialParams,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("sweep needs at least one trial"));
        }
        for &v in &self.values {
            self.variable.apply(&self.fixed, v)?;
        }
        Ok(())
    }
}

/// Aggregate of all trials at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variable: String,
    pub value: f64,
    pub trials: usize,
    pub mean_rsnr_db: f64,
    pub success_rate: f64,
    pub mean_iters: f64,
    pub mean_wall_ms: f64,
}

impl SweepRow {
    /// Folds records in the given order; the result does not depend on execution order.
    pub fn aggregate(variable: SweepVariable, value: f64, records: &[TrialRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        SweepRow {
            variable: variable.name().to_string(),
            value,
            trials: records.len(),
            mean_rsnr_db: mean(&|r| r.rsnr_db),
            success_rate: mean(&|r| if r.success { 1.0 } else { 0.0 }),
            mean_iters: mean(&|r| r.iterations as f64),
            mean_wall_ms: mean(&|r| r.wall_ms),
        }
    }
}

/// Runs every trial of `spec` on the current rayon pool. `progress` sees each finished row.
pub fn run_sweep(
    spec: &SweepSpec,
    config: &SolverConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<(Vec<SweepRow>, Vec<TrialRecord>)> {
    spec.validate()?;
    config.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len());
    let mut all = Vec::with_capacity(spec.values.len() * spec.trials);
    for &value in &spec.values {
        let params = spec.variable.apply(&spec.fixed, value)?;
        let records: Result<Vec<TrialRecord>> = (0..spec.trials as u64)
            .into_par_iter()
            .map(|i| run_trial(&params, spec.base_seed.wrapping_add(i), config))
            .collect();
        let records = records?;
        let row = SweepRow::aggregate(spec.variable, value, &records);
        progress(&row);
        rows.push(row);
        all.extend(records);
    }
    Ok((rows, all))
}

// ---------------------------------------------------------------------------
// segmented reconstruction

/// Number of samples kept from a segment of `len` when full segments of `seg_len` keep
/// `m_per_seg`: proportional, at least one, at most `len`.
pub fn samples_for_segment(len: usize, seg_len: usize, m_per_seg: usize) -> usize {
    if len == seg_len {
        return m_per_seg.min(len);
    }
    ((m_per_seg * len).div_ceil(seg_len)).clamp(1, len)
}

/// Splits `signal` into consecutive segments of `seg_len` (the last may be shorter),
/// recovers each from `m_per_seg` random samples and concatenates the reconstructions.
///
/// Segment `s` draws its indices from `seed + s`. The initial grid is at least as fine as
/// one DFT bin of a full segment (`n_init ≥ seg_len`). A segment whose solve fails
/// numerically is reconstructed as zeros.
pub fn segment_reconstruct(
    signal: &[C],
    seg_len: usize,
    m_per_seg: usize,
    config: &SolverConfig,
    seed: u64,
) -> Result<Vec<C>> {
    if seg_len == 0 || m_per_seg == 0 || m_per_seg > seg_len {
        return Err(Error::invalid(format!(
            "need 1 <= m_per_seg <= seg_len, got m_per_seg={m_per_seg}, seg_len={seg_len}"
        )));
    }
    if signal.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    config.validate()?;
    let config = SolverConfig {
        n_init: config.n_init.max(seg_len),
        ..config.clone()
    };
    let segments: Vec<(usize, &[C])> = signal.chunks(seg_len).enumerate().collect();
    let parts: Result<Vec<Vec<C>>> = segments
        .into_par_iter()
        .map(|(s, seg)| {
            let m = samples_for_segment(seg.len(), seg_len, m_per_seg);
            let mut rng = seeded_rng(seed.wrapping_add(s as u64));
            let idx = draw_sample_indices(&mut rng, seg.len(), m)?;
            let y: Vec<C> = idx.iter().map(|&i| seg[i - 1]).collect();
            match run_sure_ir(&y, &idx, &config) {
                Ok(est) => Ok(est.reconstruct(seg.len())),
                Err(Error::SolverFailure { .. }) => Ok(vec![C::new(0.0, 0.0); seg.len()]),
                Err(e) => Err(e),
            }
        })
        .collect();
    Ok(parts?.concat())
}

/// Synthetic amplitude-modulated signal standing in for a recorded AM broadcast.
///
/// Segment `s` of `seg_len` samples carries `(1 + β·msg(n)) · e^{-j ω_c n}` where the message
/// is two cosines whose frequencies are set by byte `s` of `text`. Each segment is therefore
/// a sum of five complex tones (carrier plus two sideband pairs). Phases of the message
/// tones are continuous within a segment and reset at boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmSignal {
    pub text: String,
    pub len: usize,
    pub seg_len: usize,
    /// Carrier frequency in cycles per sample.
    pub carrier: f64,
    pub modulation_index: f64,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub seed: u64,
}

impl Default for AmSignal {
    fn default() -> Self {
        AmSignal {
            text: "ITERATIVE REWEIGHTED SUPER RESOLUTION".to_string(),
            len: 4096 + 128,
            seg_len: 256,
            carrier: 0.2573,
            modulation_index: 0.6,
            psnr_db: 30.0,
            seed: 0,
        }
    }
}

impl AmSignal {
    /// Message tone frequencies (cycles per sample) of segment `s`.
    pub fn message_tones(&self, s: usize) -> [f64; 2] {
        let bytes = self.text.as_bytes();
        let b = if bytes.is_empty() { 0 } else { bytes[s % bytes.len()] };
        // 3 to 10.75 bins apart from the carrier at seg_len = 256
        let first = (3.0 + (b % 32) as f64 * 0.25) / 256.0;
        [first, 1.73 * first]
    }

    /// Clean signal and its noisy observation.
    pub fn generate(&self) -> Result<(Vec<C>, Vec<C>)> {
        if self.len == 0 || self.seg_len == 0 {
            return Err(Error::invalid("signal and segment lengths must be positive"));
        }
        let mut clean = Vec::with_capacity(self.len);
        for (s, start) in (0..self.len).step_by(self.seg_len).enumerate() {
            let len = self.seg_len.min(self.len - start);
            let [f1, f2] = self.message_tones(s);
            let half = self.modulation_index / 2.0;
            let fc = self.carrier;
            let freqs: Vec<Frequency> = [fc, fc - f1, fc + f1, fc - f2, fc + f2]
                .iter()
                .map(|&c| Frequency::from_cycles(c))
                .collect();
            let amps = [
                C::new(1.0, 0.0),
                C::new(half, 0.0),
                C::new(half, 0.0),
                C::new(half * 0.7, 0.0),
                C::new(half * 0.7, 0.0),
            ];
            // local index n = 1..len, with the carrier phase continuous across segments
            let carrier_phase = C::from_polar(1.0, -TAU * fc * start as f64);
            clean.extend(synthesize(&freqs, &amps, len)?.into_iter().map(|v| v * carrier_phase));
        }
        let mut noisy = clean.clone();
        let var = noise_variance_for_psnr(self.psnr_db);
        if var > 0.0 {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = seeded_rng(self.seed);
            let sd = (var / 2.0).sqrt();
            for v in noisy.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v += C::new(sd * re, sd * im);
            }
        }
        Ok((clean, noisy))
    }
}

/// RSNR of segmented reconstruction of the noisy AM signal at one sampling ratio,
/// measured against the noisy signal.
pub fn am_rsnr(signal: &AmSignal, ratio: f64, config: &SolverConfig, seed: u64) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("sampling ratio must lie in (0, 1]"));
    }
    let (_, noisy) = signal.generate()?;
    let m = ((ratio * signal.seg_len as f64).round() as usize).max(1);
    let recon = segment_reconstruct(&noisy, signal.seg_len, m, config, seed)?;
    rsnr(&noisy, &recon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(success: bool, err: Option<f64>) -> TrialRecord {
        TrialRecord {
            seed: 0,
            k_true: 1,
            k_est: 1,
            m: 4,
            t: 8,
            psnr_db: 10.0,
            rsnr_db: 12.0,
            success,
            freq_err: err,
            iterations: 10,
            wall_ms: 1.0,
            failure: None,
        }
    }

    #[test]
    fn aggregate_of_fixed_records() {
        let recs = [record(true, Some(0.0)), record(false, None)];
        let row = SweepRow::aggregate(SweepVariable::M, 4.0, &recs);
        assert_eq!(row.success_rate, 0.5);
        assert_eq!(row.mean_rsnr_db, 12.0);
        assert_eq!(row.trials, 2);
        assert_eq!(row.variable, "m");
    }

    #[test]
    fn aggregate_is_order_invariant_for_exact_sums() {
        let mut a = record(true, Some(0.0));
        a.rsnr_db = 1.0;
        let mut b = record(false, None);
        b.rsnr_db = 2.0;
        let x = SweepRow::aggregate(SweepVariable::K, 1.0, &[a.clone(), b.clone()]);
        let y = SweepRow::aggregate(SweepVariable::K, 1.0, &[b, a]);
        assert_eq!(x, y);
    }

    #[test]
    fn sweep_variable_parsing() {
        assert_eq!(SweepVariable::parse("spacing_mu").unwrap(), SweepVariable::SpacingMu);
        assert_eq!(SweepVariable::parse("psnr").unwrap(), SweepVariable::PsnrDb);
        assert!(SweepVariable::parse("n").is_err());
    }

    #[test]
    fn sweep_rejects_non_integer_counts_and_bad_shapes() {
        let fixed = TrialParams::default();
        assert!(SweepVariable::M.apply(&fixed, 2.5).is_err());
        assert!(SweepVariable::M.apply(&fixed, 65.0).is_err());
        assert!(SweepVariable::K.apply(&fixed, 0.0).is_err());
        assert!(SweepVariable::SpacingMu.apply(&fixed, -1.0).is_err());
        assert_eq!(SweepVariable::M.apply(&fixed, 20.0).unwrap().m, 20);
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec {
            variable: SweepVariable::M,
            values: vec![],
            fixed: TrialParams::default(),
            trials: 1,
            base_seed: 0,
        };
        assert!(spec.validate().is_err());
        spec.values = vec![10.0];
        assert!(spec.validate().is_ok());
        spec.trials = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn partial_segment_sampling_is_proportional() {
        assert_eq!(samples_for_segment(256, 256, 26), 26);
        assert_eq!(samples_for_segment(128, 256, 26), 13);
        assert_eq!(samples_for_segment(129, 256, 26), 14);
        assert_eq!(samples_for_segment(1, 256, 26), 1);
    }

    #[test]
    fn noiseless_single_tone_trial_succeeds() {
        let params = TrialParams {
            k: 1,
            t: 64,
            m: 12,
            psnr_db: f64::INFINITY,
            spacing_mu: None,
        };
        let rec = run_trial(&params, 3, &SolverConfig::default()).unwrap();
        assert!(rec.success, "{rec:?}");
        assert_eq!(rec.k_est, 1);
        assert!(rec.rsnr_db > 100.0);
    }

    #[test]
    fn trial_records_are_deterministic_apart_from_timing() {
        let params = TrialParams {
            m: 20,
            ..TrialParams::default()
        };
        let cfg = SolverConfig::default();
        let mut a = run_trial(&params, 9, &cfg).unwrap();
        let mut b = run_trial(&params, 9, &cfg).unwrap();
        a.wall_ms = 0.0;
        b.wall_ms = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn params_json_round_trip_keeps_noiseless() {
        let p = TrialParams {
            psnr_db: f64::INFINITY,
            ..TrialParams::default()
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"psnr_db\":null"));
        let back: TrialParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn am_signal_segments_are_five_tones() {
        let am = AmSignal {
            psnr_db: f64::INFINITY,
            len: 300,
            ..AmSignal::default()
        };
        let (clean, noisy) = am.generate().unwrap();
        assert_eq!(clean.len(), 300);
        assert_eq!(clean, noisy);
        // |1 + β·(cos + 0.7·cos)| ≤ 1 + 1.7β
        let peak = clean.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(peak <= 1.0 + am.modulation_index * 1.7 + 1e-12);
    }

    #[test]
    fn full_sampling_reconstructs_low_order_signal() {
        let single: Vec<C> = synthesize(&[Frequency::from_cycles(0.31)], &[C::new(1.0, 0.0)], 64).unwrap();
        let recon = segment_reconstruct(&single, 64, 64, &SolverConfig::default(), 1).unwrap();
        assert!(rsnr(&single, &recon).unwrap() >= 100.0);
    }
}
