//! Single-measurement-vector reweighted solver.
//!
//! Each outer iteration builds the weights `D = diag(1/(|ẑ_n|²+ε))`, decreases the
//! reduced objective `f(θ)` by sequential gradient steps on the frequencies,
//! recomputes `ẑ` in closed form, and then (after a warm-up) re-estimates `λ`
//! from the residual, prunes negligible atoms and anneals `ε`.
//!
//! The outer loop is shared with the multiple-measurement-vector solver: an SMV
//! problem is run as an MMV problem with a single snapshot, so the two agree
//! bit for bit at `L = 1`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{dictionary_matrix, radians_of, uniform_grid, wrap_angle, Frequency};
use crate::system::{frob_sq, gradient_from_solution, solve_reduced, CoordinateSystem};

type C = Complex64;

/// Upper bound on `λ`; reached when the residual vanishes.
pub const DEFAULT_LAMBDA_MAX: f64 = 1e12;

/// Residual norms below this are treated as an exact fit.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// How the pruning threshold `τ` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Prune when `|ẑ_n| ≤ τ · max_k |ẑ_k|`.
    #[default]
    Relative,
    /// Prune when `|ẑ_n| ≤ τ`.
    Absolute,
}

/// Every tunable of the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Size of the initial uniform frequency grid.
    pub n_init: usize,
    pub lambda0: f64,
    /// Scaling factor of the adaptive `λ` rule.
    pub d: f64,
    pub tau: f64,
    pub prune_mode: PruneMode,
    pub eps_init: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    /// `ε` is decayed once `‖Δẑ‖₂ < √ε · eps_trigger`.
    pub eps_trigger: f64,
    /// Iterations with `λ` frozen at `lambda0` and pruning disabled.
    pub warmup_iters: usize,
    pub max_outer_iters: usize,
    /// Stopping tolerance on `‖ẑ⁽ᵗ⁺¹⁾ − ẑ⁽ᵗ⁾‖₂`.
    pub conv_tol: f64,
    pub max_line_search: usize,
    /// Passes over all coordinates per outer iteration.
    pub grad_inner_iters: usize,
    /// First trial step of each line search; `None` means `1/(‖y‖²·M)`.
    pub initial_step: Option<f64>,
    /// Sufficient-decrease constant of the backtracking search.
    pub armijo: f64,
    pub lambda_max: f64,
    /// Atoms closer than this fraction of the initial grid spacing are merged; 0 disables.
    pub merge_spacing: f64,
    /// Keep doubling an accepted first trial step while `f` keeps falling.
    pub step_expansion: bool,
    /// `false` keeps `λ` fixed at `lambda0` for the whole run.
    pub adaptive_lambda: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_init: 64,
            lambda0: 0.01,
            d: 5.0,
            tau: 0.05,
            prune_mode: PruneMode::Relative,
            eps_init: 1.0,
            eps_min: 1e-8,
            eps_decay: 0.1,
            eps_trigger: 1.0,
            warmup_iters: 10,
            max_outer_iters: 300,
            conv_tol: 1e-6,
            max_line_search: 20,
            grad_inner_iters: 3,
            initial_step: None,
            armijo: 1e-4,
            lambda_max: DEFAULT_LAMBDA_MAX,
            merge_spacing: 0.05,
            step_expansion: true,
            adaptive_lambda: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("d", self.d),
            ("eps_init", self.eps_init),
            ("eps_min", self.eps_min),
            ("eps_decay", self.eps_decay),
            ("eps_trigger", self.eps_trigger),
            ("conv_tol", self.conv_tol),
            ("lambda_max", self.lambda_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.n_init == 0 {
            return Err(Error::invalid("n_init must be positive"));
        }
        if self.eps_min > self.eps_init {
            return Err(Error::invalid("eps_min must not exceed eps_init"));
        }
        if self.eps_decay >= 1.0 {
            return Err(Error::invalid("eps_decay must be below 1"));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau must be non-negative"));
        }
        if self.max_outer_iters == 0 || self.max_line_search == 0 || self.grad_inner_iters == 0 {
            return Err(Error::invalid("iteration counts must be positive"));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("initial_step must be positive"));
            }
        }
        if !(self.armijo >= 0.0 && self.armijo < 1.0) {
            return Err(Error::invalid("armijo must lie in [0, 1)"));
        }
        if !(self.merge_spacing >= 0.0) || !self.merge_spacing.is_finite() {
            return Err(Error::invalid("merge_spacing must be non-negative"));
        }
        if self.lambda0 > self.lambda_max {
            return Err(Error::invalid("lambda0 exceeds lambda_max"));
        }
        Ok(())
    }
}

/// Diagonal of the reweighting matrix `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub diag: Vec<f64>,
}

/// Current iterate of the solver. `z_hat` is `N × L`; SMV states have one column.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z_hat: DMatrix<C>,
    pub theta_hat: Vec<Frequency>,
    pub lambda: f64,
    pub epsilon: f64,
    pub iteration: usize,
}

impl SolverState {
    pub fn smv(z_hat: &[C], theta_hat: Vec<Frequency>, lambda: f64, epsilon: f64) -> Result<Self> {
        if z_hat.len() != theta_hat.len() {
            return Err(Error::invalid("z_hat and theta_hat differ in length"));
        }
        Ok(SolverState {
            z_hat: DMatrix::from_column_slice(z_hat.len(), 1, z_hat),
            theta_hat,
            lambda,
            epsilon,
            iteration: 0,
        })
    }

    pub fn model_order(&self) -> usize {
        self.theta_hat.len()
    }

    /// Weights `1/(‖ẑ_n·‖² + ε)` of the current iterate.
    pub fn weights(&self) -> WeightMatrix {
        WeightMatrix {
            diag: row_weights(&self.z_hat, self.epsilon),
        }
    }
}

/// Output of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub freqs: Vec<Frequency>,
    pub amps: Vec<C>,
    /// Objective value before the first and after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_lambda: f64,
}

impl Estimate {
    pub fn model_order(&self) -> usize {
        self.freqs.len()
    }

    /// Full-length reconstruction `ŷ_m`, `m = 1..t`.
    pub fn reconstruct(&self, t: usize) -> Vec<C> {
        crate::signal::synthesize(&self.freqs, &self.amps, t).expect("lengths agree")
    }
}

pub(crate) fn row_norms_sq(z: &DMatrix<C>) -> Vec<f64> {
    z.row_iter().map(|r| r.iter().map(|v| v.norm_sqr()).sum()).collect()
}

pub(crate) fn row_weights(z: &DMatrix<C>, epsilon: f64) -> Vec<f64> {
    row_norms_sq(z).into_iter().map(|s| 1.0 / (s + epsilon)).collect()
}

/// `D = diag(1/(|ẑ_n|² + ε))`.
pub fn weight_matrix(z_hat: &[C], epsilon: f64) -> WeightMatrix {
    WeightMatrix {
        diag: z_hat.iter().map(|z| 1.0 / (z.norm_sqr() + epsilon)).collect(),
    }
}

/// Log-sum penalty `L(z) = Σ log(|z_n|² + ε)`.
pub fn log_sum(z: &[C], epsilon: f64) -> f64 {
    z.iter().map(|v| (v.norm_sqr() + epsilon).ln()).sum()
}

/// Convex majorizer of [`log_sum`] that touches it at `z_hat`.
pub fn surrogate_q(z: &[C], z_hat: &[C], epsilon: f64) -> Result<f64> {
    if z.len() != z_hat.len() {
        return Err(Error::invalid("z and z_hat differ in length"));
    }
    Ok(z
        .iter()
        .zip(z_hat)
        .map(|(v, h)| {
            let s = h.norm_sqr() + epsilon;
            (v.norm_sqr() + epsilon) / s + s.ln() - 1.0
        })
        .sum())
}

fn column(y: &[C]) -> DMatrix<C> {
    DMatrix::from_column_slice(y.len(), 1, y)
}

fn check_observations(y: &[C], indices: &[usize]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    if y.len() != indices.len() {
        return Err(Error::invalid(format!(
            "{} observations but {} sample indices",
            y.len(),
            indices.len()
        )));
    }
    if indices.contains(&0) {
        return Err(Error::invalid("sample indices are 1-based; found 0"));
    }
    Ok(())
}

/// Squared residual `‖Y − A(θ)Z‖_F²`.
pub(crate) fn residual_sq(y: &DMatrix<C>, theta: &[f64], z: &DMatrix<C>, indices: &[usize]) -> f64 {
    let a = dictionary_matrix(theta, indices);
    frob_sq(&(y - a * z))
}

/// `G(z, θ) = Σ log(|z_n|²+ε) + λ‖y − A(θ)z‖²`.
pub fn objective_g(
    z: &[C],
    theta: &[Frequency],
    lambda: f64,
    epsilon: f64,
    y: &[C],
    indices: &[usize],
) -> Result<f64> {
    check_observations(y, indices)?;
    if z.len() != theta.len() {
        return Err(Error::invalid("z and theta differ in length"));
    }
    let rss = residual_sq(&column(y), &radians_of(theta), &column(z), indices);
    Ok(log_sum(z, epsilon) + lambda * rss)
}

/// `G̃(z, θ, λ) = G(z, θ) − d·M·log λ`, the objective decreased by the adaptive-`λ` iteration.
pub fn objective_g_tilde(
    z: &[C],
    theta: &[Frequency],
    lambda: f64,
    epsilon: f64,
    d_factor: f64,
    y: &[C],
    indices: &[usize],
) -> Result<f64> {
    let g = objective_g(z, theta, lambda, epsilon, y, indices)?;
    Ok(g - d_factor * y.len() as f64 * lambda.ln())
}

/// `z* = (AᴴA + λ⁻¹D)⁻¹Aᴴy`, factorizing a system of order `min(M, N)`.
pub fn solve_z(
    theta: &[Frequency],
    weights: &WeightMatrix,
    lambda: f64,
    y: &[C],
    indices: &[usize],
) -> Result<Vec<C>> {
    check_observations(y, indices)?;
    let sol = solve_reduced(&radians_of(theta), &weights.diag, lambda, &column(y), indices)?;
    Ok(sol.z.column(0).iter().copied().collect())
}

/// Reduced objective `f(θ) = −yᴴA(AᴴA + λ⁻¹D)⁻¹Aᴴy`.
pub fn f_theta(theta: &[Frequency], weights: &WeightMatrix, lambda: f64, y: &[C], indices: &[usize]) -> Result<f64> {
    check_observations(y, indices)?;
    Ok(solve_reduced(&radians_of(theta), &weights.diag, lambda, &column(y), indices)?.f)
}

/// Analytic gradient of [`f_theta`] with respect to every frequency.
pub fn grad_f(
    theta: &[Frequency],
    weights: &WeightMatrix,
    lambda: f64,
    y: &[C],
    indices: &[usize],
) -> Result<Vec<f64>> {
    check_observations(y, indices)?;
    let th = radians_of(theta);
    let sol = solve_reduced(&th, &weights.diag, lambda, &column(y), indices)?;
    Ok(gradient_from_solution(&th, &sol, indices))
}

/// Sequential per-coordinate gradient descent on `f(θ)` with backtracking.
///
/// Never returns a `θ` whose recomputed `f` exceeds the starting value.
pub(crate) fn descend(
    theta: &[f64],
    weights: &[f64],
    lambda: f64,
    y: &DMatrix<C>,
    indices: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let y_norm_sq = frob_sq(y);
    if y_norm_sq == 0.0 {
        return Ok(theta.to_vec());
    }
    let f_start = solve_reduced(theta, weights, lambda, y, indices)?.f;
    let step0 = cfg
        .initial_step
        .unwrap_or(1.0 / (y_norm_sq * indices.len() as f64));
    let mut sys = CoordinateSystem::new(theta, weights, lambda, y, indices)?;
    for pass in 0..cfg.grad_inner_iters {
        if pass > 0 {
            sys.rebuild();
        }
        let mut moved = false;
        for i in 0..theta.len() {
            let current = sys.theta()[i];
            let accepted = {
                let probe = sys.probe(i)?;
                let (f0, g) = probe.value_and_derivative(current);
                if g == 0.0 || !g.is_finite() {
                    None
                } else {
                    let mut step = step0;
                    let mut found = None;
                    for _ in 0..cfg.max_line_search {
                        let cand = wrap_angle(current - step * g);
                        let fc = probe.value(cand);
                        if fc <= f0 - cfg.armijo * step * g * g {
                            found = Some((cand, fc));
                            break;
                        }
                        step *= 0.5;
                    }
                    if cfg.step_expansion && step == step0 {
                        // the first trial was accepted: keep doubling while f keeps falling
                        while let Some((_, best)) = found {
                            let cand = wrap_angle(current - 2.0 * step * g);
                            let fc = probe.value(cand);
                            if fc < best && fc <= f0 - cfg.armijo * 2.0 * step * g * g {
                                step *= 2.0;
                                found = Some((cand, fc));
                            } else {
                                break;
                            }
                        }
                    }
                    found.map(|(c, _)| c)
                }
            };
            if let Some(cand) = accepted {
                sys.commit(i, cand);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let candidate = sys.into_theta();
    if candidate.as_slice() == theta {
        return Ok(candidate);
    }
    let f_end = solve_reduced(&candidate, weights, lambda, y, indices)?.f;
    if f_end <= f_start {
        Ok(candidate)
    } else {
        Ok(theta.to_vec())
    }
}

/// One θ refinement step at the state's weights and `λ`.
pub fn descent_theta(y: &[C], indices: &[usize], state: &SolverState, config: &SolverConfig) -> Result<Vec<Frequency>> {
    check_observations(y, indices)?;
    descent_theta_matrix(&column(y), indices, state, config)
}

pub(crate) fn descent_theta_matrix(
    y: &DMatrix<C>,
    indices: &[usize],
    state: &SolverState,
    config: &SolverConfig,
) -> Result<Vec<Frequency>> {
    let th = descend(
        &radians_of(&state.theta_hat),
        &state.weights().diag,
        state.lambda,
        y,
        indices,
        config,
    )?;
    Ok(th.into_iter().map(Frequency::new).collect())
}

/// Which rows survive the hard threshold. At least one row is always kept.
pub(crate) fn keep_mask(norms: &[f64], tau: f64, mode: PruneMode) -> Vec<bool> {
    if norms.is_empty() {
        return Vec::new();
    }
    if tau == 0.0 {
        return vec![true; norms.len()];
    }
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    let threshold = match mode {
        PruneMode::Relative => tau * max,
        PruneMode::Absolute => tau,
    };
    let mut keep: Vec<bool> = norms.iter().map(|&v| v > threshold).collect();
    if !keep.iter().any(|&k| k) {
        // the first index attaining the maximum survives
        let best = norms
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > norms[b] { i } else { b });
        keep[best] = true;
    }
    keep
}

fn select_rows(z: &DMatrix<C>, keep: &[bool]) -> DMatrix<C> {
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    z.select_rows(&rows)
}

fn select<T: Copy>(v: &[T], keep: &[bool]) -> Vec<T> {
    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
}

/// Removes atoms whose coefficient magnitude (row norm for MMV) is at most the threshold.
pub fn prune(state: &SolverState, tau: f64, mode: PruneMode) -> SolverState {
    let norms: Vec<f64> = row_norms_sq(&state.z_hat).into_iter().map(f64::sqrt).collect();
    let keep = keep_mask(&norms, tau, mode);
    SolverState {
        z_hat: select_rows(&state.z_hat, &keep),
        theta_hat: select(&state.theta_hat, &keep),
        lambda: state.lambda,
        epsilon: state.epsilon,
        iteration: state.iteration,
    }
}

/// `λ = d · count / rss`, capped at `lambda_max`; an exact fit returns the cap.
pub fn lambda_from_residual(d_factor: f64, count: usize, rss: f64, lambda_max: f64) -> f64 {
    if rss.sqrt() < RESIDUAL_FLOOR {
        return lambda_max;
    }
    (d_factor * count as f64 / rss).min(lambda_max)
}

/// Noise-variance driven update `λ = d·M / ‖y − A(θ)z‖²`.
pub fn update_lambda(y: &[C], theta: &[Frequency], z: &[C], d_factor: f64, indices: &[usize]) -> Result<f64> {
    check_observations(y, indices)?;
    if z.len() != theta.len() {
        return Err(Error::invalid("z and theta differ in length"));
    }
    if !(d_factor > 0.0) {
        return Err(Error::invalid("d must be positive"));
    }
    let rss = residual_sq(&column(y), &radians_of(theta), &column(z), indices);
    Ok(lambda_from_residual(d_factor, y.len(), rss, DEFAULT_LAMBDA_MAX))
}

/// Raw result of the shared outer loop, before the final threshold.
#[derive(Debug, Clone)]
pub(crate) struct EngineOutput {
    pub theta: Vec<f64>,
    pub z: DMatrix<C>,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub lambda: f64,
}

/// Objective over the full initial dictionary: atoms removed by pruning or merging hold
/// `z = 0` and contribute `log ε` each.
struct Objective<'a> {
    cfg: &'a SolverConfig,
    /// `M · L`
    count: usize,
}

impl Objective<'_> {
    fn eval(&self, z: &DMatrix<C>, rss: f64, lambda: f64, epsilon: f64, removed: usize) -> f64 {
        let penalty: f64 =
            row_norms_sq(z).iter().map(|s| (s + epsilon).ln()).sum::<f64>() + removed as f64 * epsilon.ln();
        let mut g = penalty + lambda * rss;
        if self.cfg.adaptive_lambda {
            g -= self.cfg.d * self.count as f64 * lambda.ln();
        }
        g
    }
}

/// The outer reweighting loop for an `M × L` observation matrix.
pub(crate) fn run_engine(y: &DMatrix<C>, indices: &[usize], cfg: &SolverConfig) -> Result<EngineOutput> {
    cfg.validate()?;
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::invalid("no observations"));
    }
    if y.nrows() != indices.len() {
        return Err(Error::invalid(format!(
            "{} observation rows but {} sample indices",
            y.nrows(),
            indices.len()
        )));
    }
    if indices.contains(&0) {
        return Err(Error::invalid("sample indices are 1-based; found 0"));
    }
    let objective = Objective {
        cfg,
        count: y.nrows() * y.ncols(),
    };
    let merge_tol = cfg.merge_spacing * std::f64::consts::TAU / cfg.n_init as f64;
    let mut theta = radians_of(&uniform_grid(cfg.n_init)?);
    let mut lambda = cfg.lambda0;
    let mut epsilon = cfg.eps_init;
    let mut removed = 0usize;

    let init_weights = vec![1.0 / cfg.eps_init; theta.len()];
    let sol = solve_reduced(&theta, &init_weights, lambda, y, indices).map_err(|e| e.at_iteration(0))?;
    let mut z = sol.z;
    let mut residual = sol.residual;
    let mut trace = vec![objective.eval(&z, frob_sq(&residual), lambda, epsilon, removed)];
    let mut iterations = 0;

    for t in 1..=cfg.max_outer_iters {
        iterations = t;
        let weights = row_weights(&z, epsilon);
        theta = descend(&theta, &weights, lambda, y, indices, cfg).map_err(|e| e.at_iteration(t))?;
        let sol = solve_reduced(&theta, &weights, lambda, y, indices).map_err(|e| e.at_iteration(t))?;
        let dz = frob_sq(&(&sol.z - &z)).sqrt();
        z = sol.z;
        residual = sol.residual;

        let mut changed = false;
        if merge_tol > 0.0 {
            if let Some((th, zz)) = merge_close(&theta, &z, merge_tol) {
                removed += theta.len() - th.len();
                theta = th;
                z = zz;
                changed = true;
            }
        }
        let past_warmup = t > cfg.warmup_iters;
        if past_warmup {
            let norms: Vec<f64> = row_norms_sq(&z).into_iter().map(f64::sqrt).collect();
            let keep = keep_mask(&norms, cfg.tau, cfg.prune_mode);
            let dropped = keep.iter().filter(|&&k| !k).count();
            if dropped > 0 {
                z = select_rows(&z, &keep);
                theta = select(&theta, &keep);
                removed += dropped;
                changed = true;
            }
        }
        if changed {
            residual = y - dictionary_matrix(&theta, indices) * &z;
        }
        if past_warmup {
            if cfg.adaptive_lambda {
                lambda = lambda_from_residual(cfg.d, objective.count, frob_sq(&residual), cfg.lambda_max);
            }
            if epsilon > cfg.eps_min && dz < epsilon.sqrt() * cfg.eps_trigger {
                epsilon = (epsilon * cfg.eps_decay).max(cfg.eps_min);
            }
        }
        trace.push(objective.eval(&z, frob_sq(&residual), lambda, epsilon, removed));
        if past_warmup && epsilon <= cfg.eps_min && dz <= cfg.conv_tol {
            break;
        }
    }
    Ok(EngineOutput {
        theta,
        z,
        trace,
        iterations,
        lambda,
    })
}

/// Applies the final threshold and orders components by frequency.
pub(crate) fn extract_support(out: &EngineOutput, cfg: &SolverConfig) -> (Vec<Frequency>, DMatrix<C>) {
    let norms: Vec<f64> = row_norms_sq(&out.z).into_iter().map(f64::sqrt).collect();
    let keep = keep_mask(&norms, cfg.tau, cfg.prune_mode);
    let mut rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    rows.sort_by(|&a, &b| out.theta[a].total_cmp(&out.theta[b]));
    let freqs = rows.iter().map(|&i| Frequency::new(out.theta[i])).collect();
    (freqs, out.z.select_rows(&rows))
}

/// Runs the full reweighted iteration on one observation vector.
///
/// With `adaptive_lambda = false` this is the fixed-`λ` iteration and the trace records
/// `G`; otherwise `λ` follows the residual and the trace records `G̃`.
pub fn run_sure_ir(y: &[C], indices: &[usize], config: &SolverConfig) -> Result<Estimate> {
    check_observations(y, indices)?;
    let out = run_engine(&column(y), indices, config)?;
    let (freqs, z) = extract_support(&out, config);
    Ok(Estimate {
        freqs,
        amps: z.column(0).iter().copied().collect(),
        objective_trace: out.trace,
        iterations: out.iterations,
        final_lambda: out.lambda,
    })
}

/// Merges atoms closer than `tol` radians; the survivor carries the summed coefficients.
pub(crate) fn merge_close(theta: &[f64], z: &DMatrix<C>, tol: f64) -> Option<(Vec<f64>, DMatrix<C>)> {
    let n = theta.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
    let norms = row_norms_sq(z);
    // union consecutive atoms in sorted order, with wrap-around
    let mut group = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && crate::signal::circular_distance(theta[order[pos - 1]], theta[i]) < tol {
            let g = group[order[pos - 1]];
            group[i] = g;
            groups[g].push(i);
        } else {
            group[i] = groups.len();
            groups.push(vec![i]);
        }
    }
    if groups.len() > 1 {
        let first = order[0];
        let last = order[n - 1];
        if group[first] != group[last] && crate::signal::circular_distance(theta[first], theta[last]) < tol {
            let (gf, gl) = (group[first], group[last]);
            let moved = std::mem::take(&mut groups[gf]);
            for &i in &moved {
                group[i] = gl;
            }
            groups[gl].extend(moved);
        }
    }
    groups.retain(|g| !g.is_empty());
    if groups.len() == n {
        return None;
    }
    let mut new_theta = Vec::with_capacity(groups.len());
    let mut new_z = DMatrix::zeros(groups.len(), z.ncols());
    for (r, g) in groups.iter().enumerate() {
        let lead = *g.iter().max_by(|&&a, &&b| norms[a].total_cmp(&norms[b])).unwrap();
        new_theta.push(theta[lead]);
        for &i in g {
            for l in 0..z.ncols() {
                new_z[(r, l)] += z[(i, l)];
            }
        }
    }
    Some((new_theta, new_z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::match_frequencies;
    use crate::signal::{random_instance, synthesize};

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_matrix(&[c(0.0, 0.0); 2], 1.0).diag, vec![1.0, 1.0]);
        assert_eq!(weight_matrix(&[c(1.0, 0.0)], 1.0).diag, vec![0.5]);
        assert!((weight_matrix(&[c(3.0, 4.0)], 1e-8).diag[0] - 1.0 / 25.0).abs() < 1e-10);
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_q(&[c(1.0, 0.0)], &[c(0.0, 0.0)], 1.0).unwrap(), 1.0);
        let z = [c(0.5, -2.0), c(0.0, 0.1)];
        assert!((surrogate_q(&z, &z, 1e-3).unwrap() - log_sum(&z, 1e-3)).abs() < 1e-14);
        assert!(surrogate_q(&z, &z[..1], 1.0).is_err());
    }

    #[test]
    fn objective_examples() {
        let idx = [1, 2, 5];
        let theta = [Frequency::new(0.3), Frequency::new(2.0)];
        let g = objective_g(&[c(0.0, 0.0); 2], &theta, 3.0, 1e-2, &[c(0.0, 0.0); 3], &idx).unwrap();
        assert!((g - 2.0 * (1e-2f64).ln()).abs() < 1e-14);

        let inst = random_instance(3, 32, 10, f64::INFINITY, 8).unwrap();
        let g = objective_g(&inst.true_amps, &inst.true_freqs, 5.0, 1e-4, &inst.observations, &inst.sample_indices).unwrap();
        let expect: f64 = inst.true_amps.iter().map(|a| (a.norm_sqr() + 1e-4).ln()).sum();
        assert!((g - expect).abs() < 1e-10);
    }

    #[test]
    fn objective_matches_recomputation_from_synthesis() {
        let inst = random_instance(2, 32, 9, 10.0, 2).unwrap();
        let theta = vec![Frequency::new(1.0), Frequency::new(4.0), Frequency::new(5.5)];
        let z = vec![c(0.3, 0.1), c(-1.0, 0.2), c(0.0, 0.7)];
        let (lambda, eps, d) = (2.5, 1e-3, 5.0);
        let full = synthesize(&theta, &z, inst.t()).unwrap();
        let rss: f64 = inst
            .sample_indices
            .iter()
            .zip(&inst.observations)
            .map(|(&m, y)| (y - full[m - 1]).norm_sqr())
            .sum();
        let expect = z.iter().map(|v| (v.norm_sqr() + eps).ln()).sum::<f64>() + lambda * rss;
        let g = objective_g(&z, &theta, lambda, eps, &inst.observations, &inst.sample_indices).unwrap();
        assert!((g - expect).abs() < 1e-10 * expect.abs());
        let gt = objective_g_tilde(&z, &theta, lambda, eps, d, &inst.observations, &inst.sample_indices).unwrap();
        assert!((gt - (expect - d * 9.0 * lambda.ln())).abs() < 1e-10 * expect.abs());
    }

    #[test]
    fn solve_z_zero_and_scalar_cases() {
        let idx = [1, 2, 4, 7];
        let theta = [Frequency::new(0.9)];
        let w = WeightMatrix { diag: vec![3.0] };
        assert!(solve_z(&theta, &w, 0.5, &[c(0.0, 0.0); 4], &idx).unwrap()[0] == c(0.0, 0.0));
        let y = [c(1.0, 0.0), c(0.0, -1.0), c(0.5, 0.5), c(-0.2, 0.1)];
        let a: Vec<C> = idx.iter().map(|&m| C::from_polar(1.0, -0.9 * m as f64)).collect();
        let aty: C = a.iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
        let expect = aty / (4.0 + 3.0 / 0.5);
        assert!((solve_z(&theta, &w, 0.5, &y, &idx).unwrap()[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn f_theta_identity_and_sign() {
        let inst = random_instance(2, 48, 12, 15.0, 6).unwrap();
        let theta = uniform_grid(20).unwrap();
        let w = WeightMatrix {
            diag: (0..20).map(|i| 1.0 + i as f64 * 0.3).collect(),
        };
        let (y, idx) = (&inst.observations, &inst.sample_indices);
        let z = solve_z(&theta, &w, 1.7, y, idx).unwrap();
        let a = dictionary_matrix(&radians_of(&theta), idx);
        let az = a * DMatrix::from_column_slice(20, 1, &z);
        let expect = -y.iter().zip(az.iter()).map(|(p, q)| (p.conj() * q).re).sum::<f64>();
        let f = f_theta(&theta, &w, 1.7, y, idx).unwrap();
        assert!((f - expect).abs() < 1e-12 * f.abs());
        assert!(f < 0.0);
        assert_eq!(f_theta(&theta, &w, 1.7, &[c(0.0, 0.0); 12], idx).unwrap(), 0.0);
    }

    #[test]
    fn gradient_of_zero_observation_is_zero() {
        let theta = uniform_grid(5).unwrap();
        let w = WeightMatrix { diag: vec![1.0; 5] };
        let g = grad_f(&theta, &w, 1.0, &[c(0.0, 0.0); 3], &[1, 2, 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[cfg(not(feature = "grad-sign-fault"))]
    #[test]
    fn gradient_vanishes_at_the_single_atom_minimizer() {
        let inst = random_instance(1, 64, 16, f64::INFINITY, 12).unwrap();
        let (y, idx) = (&inst.observations, &inst.sample_indices);
        let w = WeightMatrix { diag: vec![1.0] };
        let (arg, _) = crate::oracle::sweep_f_theta_1d(y, idx, 1.0, 1.0, 65536).unwrap();
        let cell = std::f64::consts::TAU / 65536.0;
        let g = |x: f64| grad_f(&[Frequency::new(x)], &w, 1.0, y, idx).unwrap()[0];
        // bisection on the sign of the derivative inside the bracketing cells
        let (mut lo, mut hi) = (arg.radians() - cell, arg.radians() + cell);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let y_norm_sq: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        assert!(g(0.5 * (lo + hi)).abs() <= 1e-4 * y_norm_sq);
        assert!(Frequency::new(lo).distance(inst.true_freqs[0]) < 1e-6);
    }

    #[test]
    fn descent_with_zero_observation_is_identity() {
        let theta = uniform_grid(6).unwrap();
        let state = SolverState::smv(&[c(0.0, 0.0); 6], theta.clone(), 1.0, 1.0).unwrap();
        let out = descent_theta(&[c(0.0, 0.0); 4], &[1, 2, 3, 4], &state, &SolverConfig::default()).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn repeated_descent_walks_one_grid_cell() {
        let inst = random_instance(1, 64, 16, f64::INFINITY, 21).unwrap();
        let (y, idx) = (&inst.observations, &inst.sample_indices);
        let truth = inst.true_freqs[0];
        let cfg = SolverConfig::default();
        let mut theta = vec![Frequency::new(truth.radians() + std::f64::consts::TAU / 64.0)];
        let mut z = vec![c(1.0, 0.0)];
        for _ in 0..50 {
            let w = weight_matrix(&z, 1e-6);
            let state = SolverState::smv(&z, theta.clone(), 10.0, 1e-6).unwrap();
            theta = descent_theta(y, idx, &state, &cfg).unwrap();
            z = solve_z(&theta, &w, 10.0, y, idx).unwrap();
        }
        assert!(theta[0].distance(truth) <= 1e-4, "{:?} vs {truth:?}", theta[0]);
    }

    #[test]
    fn prune_examples() {
        let theta = uniform_grid(3).unwrap();
        let equal = SolverState::smv(&[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)], theta.clone(), 1.0, 1.0).unwrap();
        assert_eq!(prune(&equal, 0.05, PruneMode::Relative).model_order(), 3);

        let two = SolverState::smv(&[c(1.0, 0.0), c(0.01, 0.0)], theta[..2].to_vec(), 1.0, 1.0).unwrap();
        let p = prune(&two, 0.05, PruneMode::Relative);
        assert_eq!(p.theta_hat, vec![theta[0]]);
        assert_eq!(p.z_hat.nrows(), 1);
        assert_eq!(prune(&two, 0.0, PruneMode::Relative).model_order(), 2);
        assert_eq!(prune(&two, 0.005, PruneMode::Absolute).model_order(), 2);
        assert_eq!(prune(&two, 0.05, PruneMode::Absolute).model_order(), 1);
    }

    #[test]
    fn prune_keeps_one_component_with_lowest_index_on_ties() {
        assert_eq!(keep_mask(&[0.1, 0.3, 0.3], 2.0, PruneMode::Absolute), vec![false, true, false]);
        assert_eq!(keep_mask(&[], 0.5, PruneMode::Relative), Vec::<bool>::new());
    }

    #[test]
    fn lambda_update_arithmetic() {
        let theta = [Frequency::new(0.0)];
        let mut y = vec![c(0.0, 0.0); 10];
        y[0] = c(1.0, 0.0);
        y[3] = c(0.0, -1.0);
        let idx: Vec<usize> = (1..=10).collect();
        assert_eq!(update_lambda(&y, &theta, &[c(0.0, 0.0)], 5.0, &idx).unwrap(), 25.0);
        assert_eq!(lambda_from_residual(5.0, 10, 2.0, 1e12), 25.0);
    }

    #[test]
    fn lambda_saturates_as_residual_vanishes() {
        let mut last = 0.0;
        for k in 0..30 {
            let lam = lambda_from_residual(5.0, 10, 10f64.powi(-k), DEFAULT_LAMBDA_MAX);
            assert!(lam >= last);
            last = lam;
        }
        assert_eq!(last, DEFAULT_LAMBDA_MAX);
        assert_eq!(lambda_from_residual(5.0, 10, 0.0, DEFAULT_LAMBDA_MAX), DEFAULT_LAMBDA_MAX);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        for bad in [
            SolverConfig { n_init: 0, ..Default::default() },
            SolverConfig { lambda0: 0.0, ..Default::default() },
            SolverConfig { eps_min: 2.0, ..Default::default() },
            SolverConfig { tau: -0.1, ..Default::default() },
            SolverConfig { merge_spacing: f64::NAN, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let text = serde_json::to_string(&SolverConfig::default()).unwrap();
        let back: SolverConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, SolverConfig::default());
        let partial: SolverConfig = serde_json::from_str(r#"{"tau": 0.1}"#).unwrap();
        assert_eq!(partial.tau, 0.1);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"tua": 0.1}"#).is_err());
    }

    #[test]
    fn single_tone_is_recovered_exactly() {
        let inst = random_instance(1, 64, 8, f64::INFINITY, 0).unwrap();
        let est = run_sure_ir(&inst.observations, &inst.sample_indices, &SolverConfig::default()).unwrap();
        assert_eq!(est.model_order(), 1);
        assert!(match_frequencies(&inst.true_freqs, &est.freqs) <= 1e-6);
        assert!((est.amps[0] - inst.true_amps[0]).norm() < 1e-6);
    }

    #[test]
    fn merge_combines_close_atoms_and_wraps() {
        let z = DMatrix::from_column_slice(4, 1, &[c(1.0, 0.0), c(0.5, 0.0), c(2.0, 0.0), c(0.1, 0.0)]);
        let theta = [0.001, 1.0, 1.0005, std::f64::consts::TAU - 0.001];
        let (th, zz) = merge_close(&theta, &z, 0.01).unwrap();
        assert_eq!(th.len(), 2);
        // the survivor takes the frequency of its largest member
        assert!(th.contains(&0.001) && th.contains(&1.0005));
        let total: C = zz.iter().sum();
        assert!((total - c(3.6, 0.0)).norm() < 1e-15);
        assert!(merge_close(&[0.0, 1.0], &z.rows(0, 2).into_owned(), 0.01).is_none());
    }

    #[test]
    fn fixed_lambda_run_without_pruning_is_monotone() {
        let cfg = SolverConfig {
            adaptive_lambda: false,
            lambda0: 10.0,
            tau: 0.0,
            merge_spacing: 0.0,
            max_outer_iters: 60,
            ..Default::default()
        };
        let inst = random_instance(2, 64, 20, 25.0, 4).unwrap();
        let est = run_sure_ir(&inst.observations, &inst.sample_indices, &cfg).unwrap();
        for w in est.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}
