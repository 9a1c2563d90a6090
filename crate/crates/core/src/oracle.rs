//! Independent oracles for the solver.
//!
//! Linear algebra here is deliberately hand-rolled on flat row-major buffers: dense
//! `N × N` LU with partial pivoting and explicit inverses. Nothing in this module goes
//! through the factorization or rank-one update code used by the solver, so agreement
//! between the two is evidence rather than tautology.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::match_frequencies;
use crate::mmv::{f_theta_mmv, grad_f_mmv, solve_z_mmv};
use crate::signal::{random_instance, seeded_rng, Frequency};
use crate::solver::{f_theta, grad_f, log_sum, run_sure_ir, solve_z, surrogate_q, SolverConfig, WeightMatrix};

type C = Complex64;

/// Largest `N` accepted by the dense oracles.
pub const DENSE_CAP: usize = 256;

/// Frequency error (cycles) below which a noiseless run counts as exact.
pub const EXACT_FREQ_TOL: f64 = 1e-6;

/// Outcome of one oracle comparison. `pass ⇔ max_rel_err ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub cases: usize,
    pub pass: bool,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, max_abs_err: f64, max_rel_err: f64, cases: usize, tolerance: f64) -> Self {
        OracleReport {
            name: name.into(),
            max_abs_err,
            max_rel_err,
            cases,
            // NaN errors fail
            pass: max_rel_err <= tolerance,
            tolerance,
        }
    }
}

/// Central differences `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h`.
pub fn fd_gradient<F>(mut objective: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + step;
        let fp = objective(&x);
        x[i] = theta[i] - step;
        let fm = objective(&x);
        x[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::OracleFailure(format!("non-finite objective at coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// dense complex linear algebra

/// Row-major square complex matrix.
#[derive(Debug, Clone)]
struct Square {
    n: usize,
    a: Vec<C>,
}

impl Square {
    fn zeros(n: usize) -> Self {
        Square {
            n,
            a: vec![C::new(0.0, 0.0); n * n],
        }
    }

    fn at(&self, r: usize, c: usize) -> C {
        self.a[r * self.n + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut C {
        &mut self.a[r * self.n + c]
    }

    fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|c| (0..self.n).map(|r| self.at(r, c).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn mul_vec(&self, v: &[C]) -> Vec<C> {
        (0..self.n)
            .map(|r| (0..self.n).map(|c| self.at(r, c) * v[c]).sum())
            .collect()
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    fn inverse(&self) -> Result<Square> {
        let n = self.n;
        let mut work = self.clone();
        let mut inv = Square::zeros(n);
        for i in 0..n {
            *inv.at_mut(i, i) = C::new(1.0, 0.0);
        }
        let scale = self.norm1();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| work.at(a, col).norm().total_cmp(&work.at(b, col).norm()))
                .expect("non-empty range");
            let p = work.at(pivot, col);
            if !(p.norm() > f64::EPSILON * scale * n as f64) || !p.norm().is_finite() {
                return Err(Error::OracleFailure(format!(
                    "dense system of order {n} is singular (pivot {:.3e}, 1-norm {scale:.3e})",
                    p.norm()
                )));
            }
            if pivot != col {
                for c in 0..n {
                    work.a.swap(pivot * n + c, col * n + c);
                    inv.a.swap(pivot * n + c, col * n + c);
                }
            }
            let pinv = C::new(1.0, 0.0) / work.at(col, col);
            for c in 0..n {
                *work.at_mut(col, c) *= pinv;
                *inv.at_mut(col, c) *= pinv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = work.at(r, col);
                if factor == C::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    let w = work.at(col, c);
                    let v = inv.at(col, c);
                    *work.at_mut(r, c) -= factor * w;
                    *inv.at_mut(r, c) -= factor * v;
                }
            }
        }
        let condition = scale * inv.norm1();
        if !condition.is_finite() || condition > 1.0 / f64::EPSILON {
            return Err(Error::OracleFailure(format!(
                "dense system of order {n} is singular (condition estimate {condition:.3e})"
            )));
        }
        Ok(inv)
    }
}

fn dense_atom(omega: f64, indices: &[usize]) -> Vec<C> {
    indices
        .iter()
        .map(|&m| {
            let phase = -omega * m as f64;
            C::new(phase.cos(), phase.sin())
        })
        .collect()
}

fn dense_atom_derivative(omega: f64, indices: &[usize]) -> Vec<C> {
    indices
        .iter()
        .map(|&m| {
            let phase = -omega * m as f64;
            C::new(0.0, -(m as f64)) * C::new(phase.cos(), phase.sin())
        })
        .collect()
}

fn inner(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Everything the dense route needs at one `θ`: columns of `A`, `A'` and `X⁻¹`.
struct DenseSystem {
    atoms: Vec<Vec<C>>,
    derivs: Vec<Vec<C>>,
    x_inv: Square,
}

impl DenseSystem {
    fn new(theta: &[f64], weights: &[f64], lambda: f64, indices: &[usize]) -> Result<Self> {
        let n = theta.len();
        if n == 0 || n > DENSE_CAP {
            return Err(Error::invalid(format!("dense oracle needs 1 <= N <= {DENSE_CAP}, got {n}")));
        }
        if weights.len() != n {
            return Err(Error::invalid("weights and theta differ in length"));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        let atoms: Vec<Vec<C>> = theta.iter().map(|&w| dense_atom(w, indices)).collect();
        let derivs: Vec<Vec<C>> = theta.iter().map(|&w| dense_atom_derivative(w, indices)).collect();
        // X = AᴴA + λ⁻¹D, the literal N × N system
        let mut x = Square::zeros(n);
        for r in 0..n {
            for c in 0..n {
                *x.at_mut(r, c) = inner(&atoms[r], &atoms[c]);
            }
            *x.at_mut(r, r) += C::new(weights[r] / lambda, 0.0);
        }
        Ok(DenseSystem {
            atoms,
            derivs,
            x_inv: x.inverse()?,
        })
    }

    fn a_h(&self, y: &[C]) -> Vec<C> {
        self.atoms.iter().map(|a| inner(a, y)).collect()
    }

    fn a_times(&self, z: &[C]) -> Vec<C> {
        let m = self.atoms[0].len();
        (0..m).map(|r| self.atoms.iter().zip(z).map(|(a, zn)| a[r] * zn).sum()).collect()
    }

    fn solve(&self, y: &[C]) -> Vec<C> {
        self.x_inv.mul_vec(&self.a_h(y))
    }

    /// `f = −Re yᴴA X⁻¹Aᴴy` for one snapshot.
    fn f(&self, y: &[C]) -> f64 {
        let u = self.a_h(y);
        -inner(&u, &self.x_inv.mul_vec(&u)).re
    }

    /// `∂f/∂θ_i` from `f = −uᴴX⁻¹u` with `u = Aᴴy`:
    /// `∂f = −2 Re(yᴴ a'_i e_iᴴ X⁻¹u) + uᴴX⁻¹ (∂X) X⁻¹u`, where
    /// `∂X = e_i a'_iᴴA + Aᴴa'_i e_iᴴ` (the `λ⁻¹D` term does not depend on `θ`).
    fn gradient(&self, y: &[C]) -> Vec<f64> {
        let n = self.atoms.len();
        let u = self.a_h(y);
        let v = self.x_inv.mul_vec(&u);
        // X is Hermitian, so uᴴX⁻¹ = vᴴ
        (0..n)
            .map(|i| {
                let d = &self.derivs[i];
                let first = -2.0 * (inner(y, d) * v[i]).re;
                // vᴴ ∂X v = conj(v_i)·(a'_iᴴ A v) + (vᴴ Aᴴ a'_i)·v_i
                let av = self.a_times(&v);
                let da = inner(d, &av);
                let second = (v[i].conj() * da + da.conj() * v[i]).re;
                first + second
            })
            .collect()
    }
}

fn columns(y: &DMatrix<C>) -> Vec<Vec<C>> {
    y.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn check_indices(m: usize, indices: &[usize]) -> Result<()> {
    if m == 0 || m != indices.len() {
        return Err(Error::invalid(format!("{m} observations but {} sample indices", indices.len())));
    }
    if indices.contains(&0) {
        return Err(Error::invalid("sample indices are 1-based; found 0"));
    }
    Ok(())
}

/// `(AᴴA + λ⁻¹D)⁻¹Aᴴy` from an explicit `N × N` inverse.
pub fn dense_solve_z(theta: &[Frequency], weights: &WeightMatrix, lambda: f64, y: &[C], indices: &[usize]) -> Result<Vec<C>> {
    check_indices(y.len(), indices)?;
    let th: Vec<f64> = theta.iter().map(|f| f.radians()).collect();
    Ok(DenseSystem::new(&th, &weights.diag, lambda, indices)?.solve(y))
}

/// Dense `f(θ)` summed over the columns of `y`.
pub fn dense_f_theta(theta: &[f64], weights: &[f64], lambda: f64, y: &DMatrix<C>, indices: &[usize]) -> Result<f64> {
    check_indices(y.nrows(), indices)?;
    let sys = DenseSystem::new(theta, weights, lambda, indices)?;
    Ok(columns(y).iter().map(|c| sys.f(c)).sum())
}

/// Trace-form chain-rule gradient of [`dense_f_theta`].
pub fn dense_grad_f(theta: &[f64], weights: &[f64], lambda: f64, y: &DMatrix<C>, indices: &[usize]) -> Result<Vec<f64>> {
    check_indices(y.nrows(), indices)?;
    let sys = DenseSystem::new(theta, weights, lambda, indices)?;
    let mut g = vec![0.0; theta.len()];
    for c in columns(y) {
        for (acc, v) in g.iter_mut().zip(sys.gradient(&c)) {
            *acc += v;
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// property audits

fn random_complex<R: Rng>(rng: &mut R, scale: f64) -> C {
    C::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

/// Audits `Q(z|ẑ) ≥ L(z)` on random draws and `Q = L` at `z = ẑ`.
///
/// Errors are absolute: `max(−(Q−L))` over the draws and `max |Q−L|` at the touching point.
pub fn check_majorization(samples: usize, seed: u64) -> OracleReport {
    const TOL: f64 = 1e-12;
    let mut rng = seeded_rng(seed);
    let eps_choices = [1.0, 1e-4, 1e-8];
    let mut worst: f64 = 0.0;
    for s in 0..samples.max(1) {
        let n = rng.random_range(1..=8);
        let eps = if s < eps_choices.len() {
            eps_choices[s]
        } else {
            eps_choices[rng.random_range(0..eps_choices.len())]
        };
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        let z: Vec<C> = (0..n).map(|_| random_complex(&mut rng, scale)).collect();
        let z_hat: Vec<C> = (0..n).map(|_| random_complex(&mut rng, scale)).collect();
        let gap = surrogate_q(&z, &z_hat, eps).expect("equal lengths") - log_sum(&z, eps);
        worst = worst.max(-gap);
        let touch = surrogate_q(&z_hat, &z_hat, eps).expect("equal lengths") - log_sum(&z_hat, eps);
        worst = worst.max(touch.abs());
    }
    OracleReport::new("majorization", worst, worst, samples.max(1), TOL)
}

/// A random `(θ, D, λ, Y)` configuration of the reduced objective.
#[derive(Debug, Clone)]
pub struct ReducedCase {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub y: DMatrix<C>,
    pub indices: Vec<usize>,
}

impl ReducedCase {
    /// `snapshots` columns from independent noisy instances sharing one index set.
    pub fn random(seed: u64, snapshots: usize, max_m: usize, max_n: usize) -> Result<Self> {
        let mut rng = seeded_rng(seed ^ 0x5eed_0a1c);
        let t = rng.random_range(24..=64);
        let m = rng.random_range(4..=max_m.min(t));
        let n = rng.random_range(1..=max_n);
        let k = rng.random_range(1..=3);
        let first = random_instance(k, t, m, 20.0, seed)?;
        let mut y = DMatrix::zeros(m, snapshots);
        for l in 0..snapshots {
            let inst = random_instance(k, t, m, 20.0, seed.wrapping_add(7919 * (l as u64 + 1)))?;
            for (r, &idx) in first.sample_indices.iter().enumerate() {
                y[(r, l)] = if l == 0 { first.observations[r] } else { inst.full_signal[idx - 1] };
            }
        }
        let theta = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        let weights = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        Ok(ReducedCase {
            theta,
            weights,
            lambda,
            y,
            indices: first.sample_indices,
        })
    }

    fn freqs(&self) -> Vec<Frequency> {
        self.theta.iter().map(|&w| Frequency::new(w)).collect()
    }

    fn weight_matrix(&self) -> WeightMatrix {
        WeightMatrix {
            diag: self.weights.clone(),
        }
    }

    fn column(&self) -> Vec<C> {
        self.y.column(0).iter().copied().collect()
    }
}

/// Signature of an analytic gradient under test.
pub type GradientFn<'a> = dyn Fn(&ReducedCase) -> Result<Vec<f64>> + 'a;

fn normwise(reference: &[f64], value: &[f64]) -> (f64, f64) {
    let abs = reference
        .iter()
        .zip(value)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let rel = if scale > 0.0 { abs / scale } else { abs };
    (abs, rel)
}

/// Compares `grad` against central differences of the dense `f` over `cases` configurations.
pub fn gradient_report_with(name: &str, grad: &GradientFn<'_>, cases: usize, snapshots: usize, seed: u64) -> Result<OracleReport> {
    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for c in 0..cases {
        let case = ReducedCase::random(seed.wrapping_add(c as u64), snapshots, 16, 12)?;
        let fd = fd_gradient(
            |th| dense_f_theta(th, &case.weights, case.lambda, &case.y, &case.indices).unwrap_or(f64::NAN),
            &case.theta,
            STEP,
        )?;
        let g = grad(&case)?;
        let (a, r) = normwise(&fd, &g);
        worst_abs = worst_abs.max(a);
        worst_rel = if r.is_nan() { f64::NAN } else { worst_rel.max(r) };
    }
    Ok(OracleReport::new(name, worst_abs, worst_rel, cases, TOL))
}

/// `grad_f` against finite differences of the dense objective.
pub fn check_gradient(cases: usize, seed: u64) -> Result<OracleReport> {
    gradient_report_with(
        "gradient/smv-fd",
        &|c: &ReducedCase| grad_f(&c.freqs(), &c.weight_matrix(), c.lambda, &c.column(), &c.indices),
        cases,
        1,
        seed,
    )
}

/// `grad_f_mmv` against finite differences of the dense objective.
pub fn check_gradient_mmv(cases: usize, seed: u64) -> Result<OracleReport> {
    gradient_report_with(
        "gradient/mmv-fd",
        &|c: &ReducedCase| grad_f_mmv(&c.freqs(), &c.weight_matrix(), c.lambda, &c.y, &c.indices),
        cases,
        3,
        seed,
    )
}

/// `grad_f_mmv` against the trace-form chain rule evaluated densely.
pub fn check_gradient_chain_rule(cases: usize, seed: u64) -> Result<OracleReport> {
    const TOL: f64 = 1e-9;
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for c in 0..cases {
        let case = ReducedCase::random(seed.wrapping_add(c as u64), 2, 16, 12)?;
        let reference = dense_grad_f(&case.theta, &case.weights, case.lambda, &case.y, &case.indices)?;
        let g = grad_f_mmv(&case.freqs(), &case.weight_matrix(), case.lambda, &case.y, &case.indices)?;
        let (a, r) = normwise(&reference, &g);
        worst_abs = worst_abs.max(a);
        worst_rel = worst_rel.max(r);
    }
    Ok(OracleReport::new("gradient/chain-rule", worst_abs, worst_rel, cases, TOL))
}

/// `solve_z` against [`dense_solve_z`] for `M ≤ 16`, `N ≤ 64`.
pub fn check_dense_solve(cases: usize, seed: u64) -> Result<OracleReport> {
    const TOL: f64 = 1e-8;
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for c in 0..cases {
        let case = ReducedCase::random(seed.wrapping_add(c as u64), 1, 16, 64)?;
        let (theta, w, y) = (case.freqs(), case.weight_matrix(), case.column());
        let reference = dense_solve_z(&theta, &w, case.lambda, &y, &case.indices)?;
        let z = solve_z(&theta, &w, case.lambda, &y, &case.indices)?;
        let diff: f64 = reference.iter().zip(&z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = reference.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        worst_abs = worst_abs.max(diff);
        worst_rel = worst_rel.max(if norm > 0.0 { diff / norm } else { diff });
    }
    Ok(OracleReport::new("dense/solve-z", worst_abs, worst_rel, cases, TOL))
}

/// `f_theta` and `f_theta_mmv` against the dense objective; also checks `solve_z_mmv` columns.
pub fn check_dense_objective(cases: usize, seed: u64) -> Result<OracleReport> {
    const TOL: f64 = 1e-9;
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    let record = |worst: &mut (f64, f64), reference: f64, value: f64| {
        let d = (reference - value).abs();
        worst.0 = worst.0.max(d);
        worst.1 = worst.1.max(d / reference.abs().max(f64::MIN_POSITIVE));
    };
    for c in 0..cases {
        let case = ReducedCase::random(seed.wrapping_add(c as u64), 2, 16, 24)?;
        let (theta, w) = (case.freqs(), case.weight_matrix());
        let reference = dense_f_theta(&case.theta, &case.weights, case.lambda, &case.y, &case.indices)?;
        let mut worst = (worst_abs, worst_rel);
        record(&mut worst, reference, f_theta_mmv(&theta, &w, case.lambda, &case.y, &case.indices)?);
        let first = DMatrix::from_column_slice(case.y.nrows(), 1, &case.column());
        let reference = dense_f_theta(&case.theta, &case.weights, case.lambda, &first, &case.indices)?;
        record(&mut worst, reference, f_theta(&theta, &w, case.lambda, &case.column(), &case.indices)?);
        (worst_abs, worst_rel) = worst;
        let z = solve_z_mmv(&theta, &w, case.lambda, &case.y, &case.indices)?;
        for (l, col) in columns(&case.y).iter().enumerate() {
            let zd = dense_solve_z(&theta, &w, case.lambda, col, &case.indices)?;
            for (n, v) in zd.iter().enumerate() {
                let d = (z[(n, l)] - v).norm();
                worst_abs = worst_abs.max(d);
                worst_rel = worst_rel.max(d / v.norm().max(1.0));
            }
        }
    }
    Ok(OracleReport::new("dense/objective", worst_abs, worst_rel, cases, TOL))
}

/// Exhaustive single-atom minimizer of `f`: evaluates `−|aᴴy|²/(M + w/λ)` on a uniform grid.
///
/// Ties resolve to the lowest grid index.
pub fn sweep_f_theta_1d(y: &[C], indices: &[usize], weight: f64, lambda: f64, grid_size: usize) -> Result<(Frequency, f64)> {
    check_indices(y.len(), indices)?;
    if grid_size == 0 {
        return Err(Error::invalid("grid_size must be positive"));
    }
    if !(lambda > 0.0) || !(weight >= 0.0) {
        return Err(Error::invalid("lambda must be positive and weight non-negative"));
    }
    let denom = indices.len() as f64 + weight / lambda;
    let mut best = (0.0, f64::INFINITY);
    for g in 0..grid_size {
        let omega = TAU * g as f64 / grid_size as f64;
        let f = -inner(&dense_atom(omega, indices), y).norm_sqr() / denom;
        if f < best.1 {
            best = (omega, f);
        }
    }
    Ok((Frequency::new(best.0), best.1))
}

/// One noiseless run of the full adaptive pipeline; exact iff `K̂ = k` and the frequency
/// error is at most [`EXACT_FREQ_TOL`] cycles.
pub fn exact_recovery_trial(k: usize, m: usize, t: usize, seed: u64, config: &SolverConfig) -> Result<bool> {
    if m > t {
        return Err(Error::invalid("m must not exceed t"));
    }
    let inst = random_instance(k, t, m, f64::INFINITY, seed)?;
    match run_sure_ir(&inst.observations, &inst.sample_indices, config) {
        Ok(est) => Ok(match_frequencies(&inst.true_freqs, &est.freqs) <= EXACT_FREQ_TOL),
        Err(Error::SolverFailure { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Number of exact recoveries over seeds `base_seed .. base_seed + trials`.
pub fn exact_recovery_count(k: usize, m: usize, t: usize, trials: usize, base_seed: u64, config: &SolverConfig) -> Result<usize> {
    use rayon::prelude::*;
    let hits: Result<Vec<bool>> = (0..trials as u64)
        .into_par_iter()
        .map(|s| exact_recovery_trial(k, m, t, base_seed + s, config))
        .collect();
    Ok(hits?.into_iter().filter(|&h| h).count())
}

// ---------------------------------------------------------------------------
// suites

/// Names accepted by [`run_suites`].
pub const SUITES: [&str; 5] = ["majorization", "gradient", "dense", "sweep", "recovery"];

/// Exact-recovery floors `(k, m, t, floor)` for the default configuration, set below the
/// rates of a 100-seed pilot (seeds 0..100: 0.73 and 0.20). At `m = 4` about a fifth of
/// the index sets share a common stride, which makes the tone unidentifiable.
pub const RECOVERY_FLOORS: [(usize, usize, usize, f64); 2] = [(1, 4, 32, 0.60), (3, 8, 64, 0.08)];

/// `sweep_f_theta_1d` on noiseless single tones: the grid minimizer lies within one grid
/// cell of the truth. Errors are in radians (absolute) and grid cells (relative).
pub fn check_sweep(cases: usize, seed: u64) -> Result<OracleReport> {
    const GRID: usize = 4096;
    let cell = TAU / GRID as f64;
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let inst = random_instance(1, 64, 16, f64::INFINITY, seed.wrapping_add(c as u64))?;
        let (arg, _) = sweep_f_theta_1d(&inst.observations, &inst.sample_indices, 1.0, 1.0, GRID)?;
        worst = worst.max(arg.distance(inst.true_freqs[0]));
    }
    Ok(OracleReport::new("sweep/single-tone", worst, worst / cell, cases, 1.0))
}

fn recovery_reports(config: &SolverConfig, seed: u64) -> Result<Vec<OracleReport>> {
    const TRIALS: usize = 100;
    RECOVERY_FLOORS
        .iter()
        .map(|&(k, m, t, floor)| {
            let hits = exact_recovery_count(k, m, t, TRIALS, seed, config)?;
            let miss = 1.0 - hits as f64 / TRIALS as f64;
            Ok(OracleReport::new(
                format!("recovery/k{k}-m{m}-t{t}"),
                miss,
                miss,
                TRIALS,
                1.0 - floor,
            ))
        })
        .collect()
}

/// Runs the named suites (all of [`SUITES`] when `filter` is `None`).
pub fn run_suites(filter: Option<&str>, seed: u64) -> Result<Vec<OracleReport>> {
    let selected: Vec<&str> = match filter {
        None => SUITES.to_vec(),
        Some(name) => {
            if !SUITES.contains(&name) {
                return Err(Error::invalid(format!("unknown suite '{name}'; expected one of {}", SUITES.join(", "))));
            }
            vec![name]
        }
    };
    let mut reports = Vec::new();
    for suite in selected {
        match suite {
            "majorization" => reports.push(check_majorization(1000, seed)),
            "gradient" => {
                reports.push(check_gradient(50, seed)?);
                reports.push(check_gradient_mmv(50, seed)?);
                reports.push(check_gradient_chain_rule(50, seed)?);
            }
            "dense" => {
                reports.push(check_dense_solve(50, seed)?);
                reports.push(check_dense_objective(20, seed)?);
            }
            "sweep" => reports.push(check_sweep(10, seed)?),
            "recovery" => reports.extend(recovery_reports(&SolverConfig::default(), seed)?),
            _ => unreachable!("filtered above"),
        }
    }
    Ok(reports)
}
