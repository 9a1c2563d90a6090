//! Multiple-measurement-vector extension: `L` snapshots share one frequency support.
//!
//! Every operation runs the same code path as its single-snapshot counterpart with an
//! `M × L` observation matrix, so `L = 1` reproduces the SMV results bit for bit.

use nalgebra::DMatrix;
use num_complex::Complex64;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::{draw_sample_indices, noise_variance_for_psnr, radians_of, seeded_rng, synthesize, Frequency};
use crate::solver::{
    descent_theta_matrix, extract_support, row_norms_sq, row_weights, run_engine, SolverConfig, SolverState,
    WeightMatrix,
};
use crate::system::{gradient_from_solution, solve_reduced};

type C = Complex64;

/// `Y = [y₁ … y_L]` observed on a common set of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MmvObservations {
    y: DMatrix<C>,
    sample_indices: Vec<usize>,
    t: usize,
}

impl MmvObservations {
    /// `y` is `M × L`; `sample_indices` are 1-based, strictly increasing and at most `t`.
    pub fn new(y: DMatrix<C>, sample_indices: Vec<usize>, t: usize) -> Result<Self> {
        if y.ncols() == 0 {
            return Err(Error::invalid("at least one snapshot is required"));
        }
        if y.nrows() == 0 || y.nrows() != sample_indices.len() {
            return Err(Error::invalid(format!(
                "{} observation rows but {} sample indices",
                y.nrows(),
                sample_indices.len()
            )));
        }
        if sample_indices[0] == 0 || sample_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sample indices must be 1-based and strictly increasing"));
        }
        if *sample_indices.last().expect("non-empty") > t {
            return Err(Error::invalid("sample index exceeds signal length"));
        }
        Ok(MmvObservations { y, sample_indices, t })
    }

    pub fn y_matrix(&self) -> &DMatrix<C> {
        &self.y
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.y.ncols()
    }
}

/// Ground truth of a synthetic MMV problem: `amps[k][l]` is tone `k` in snapshot `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmvInstance {
    pub observations: MmvObservations,
    pub true_freqs: Vec<Frequency>,
    pub true_amps: Vec<Vec<C>>,
}

/// `l` snapshots of `k` shared uniform frequencies with independent unit-modulus
/// amplitudes and independent circular Gaussian noise, observed on one index set.
pub fn random_mmv_instance(k: usize, l: usize, t: usize, m: usize, psnr_db: f64, seed: u64) -> Result<MmvInstance> {
    if k == 0 || l == 0 {
        return Err(Error::invalid("k and the snapshot count must be at least 1"));
    }
    if psnr_db.is_nan() {
        return Err(Error::invalid("psnr must not be NaN"));
    }
    let mut rng = seeded_rng(seed);
    let freqs: Vec<Frequency> = (0..k).map(|_| Frequency::new(rng.random::<f64>() * std::f64::consts::TAU)).collect();
    let amps: Vec<Vec<C>> = (0..k)
        .map(|_| (0..l).map(|_| C::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)).collect())
        .collect();
    let indices = draw_sample_indices(&mut rng, t, m)?;
    let sd = (noise_variance_for_psnr(psnr_db) / 2.0).sqrt();
    let mut y = DMatrix::zeros(m, l);
    for s in 0..l {
        let col: Vec<C> = amps.iter().map(|a| a[s]).collect();
        let full = synthesize(&freqs, &col, t)?;
        for (r, &i) in indices.iter().enumerate() {
            let mut v = full[i - 1];
            if sd > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                v += C::new(sd * re, sd * im);
            }
            y[(r, s)] = v;
        }
    }
    Ok(MmvInstance {
        observations: MmvObservations::new(y, indices, t)?,
        true_freqs: freqs,
        true_amps: amps,
    })
}

/// Output of [`run_sure_ir_mmv`]. Row `k` of `coeff_matrix` belongs to `freqs[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparseEstimate {
    pub freqs: Vec<Frequency>,
    pub coeff_matrix: DMatrix<C>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_lambda: f64,
}

impl RowSparseEstimate {
    pub fn model_order(&self) -> usize {
        self.freqs.len()
    }
}

fn check(y: &DMatrix<C>, indices: &[usize]) -> Result<()> {
    if y.ncols() == 0 || y.nrows() == 0 {
        return Err(Error::invalid("empty observation matrix"));
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
    Ok(())
}

/// `D = diag(1/(‖ẑ_n·‖² + ε))` over the rows of `Ẑ`.
pub fn weight_matrix_mmv(z_hat: &DMatrix<C>, epsilon: f64) -> WeightMatrix {
    WeightMatrix {
        diag: row_weights(z_hat, epsilon),
    }
}

/// `Z = (AᴴA + λ⁻¹D)⁻¹AᴴY`.
pub fn solve_z_mmv(
    theta: &[Frequency],
    weights: &WeightMatrix,
    lambda: f64,
    y: &DMatrix<C>,
    indices: &[usize],
) -> Result<DMatrix<C>> {
    check(y, indices)?;
    Ok(solve_reduced(&radians_of(theta), &weights.diag, lambda, y, indices)?.z)
}

/// `f(θ) = −Re tr(YᴴA(AᴴA + λ⁻¹D)⁻¹AᴴY)`.
pub fn f_theta_mmv(
    theta: &[Frequency],
    weights: &WeightMatrix,
    lambda: f64,
    y: &DMatrix<C>,
    indices: &[usize],
) -> Result<f64> {
    check(y, indices)?;
    Ok(solve_reduced(&radians_of(theta), &weights.diag, lambda, y, indices)?.f)
}

/// Analytic gradient of [`f_theta_mmv`].
pub fn grad_f_mmv(
    theta: &[Frequency],
    weights: &WeightMatrix,
    lambda: f64,
    y: &DMatrix<C>,
    indices: &[usize],
) -> Result<Vec<f64>> {
    check(y, indices)?;
    let th = radians_of(theta);
    let sol = solve_reduced(&th, &weights.diag, lambda, y, indices)?;
    Ok(gradient_from_solution(&th, &sol, indices))
}

/// `G(Z, θ) = Σ log(‖z_n·‖² + ε) + λ‖Y − A(θ)Z‖_F²`.
pub fn objective_g_mmv(
    z: &DMatrix<C>,
    theta: &[Frequency],
    lambda: f64,
    epsilon: f64,
    y: &DMatrix<C>,
    indices: &[usize],
) -> Result<f64> {
    check(y, indices)?;
    if z.nrows() != theta.len() || z.ncols() != y.ncols() {
        return Err(Error::invalid("coefficient matrix shape does not match theta and Y"));
    }
    let penalty: f64 = row_norms_sq(z).iter().map(|s| (s + epsilon).ln()).sum();
    let rss = crate::solver::residual_sq(y, &radians_of(theta), z, indices);
    Ok(penalty + lambda * rss)
}

/// One θ refinement step on the MMV reduced objective.
pub fn descent_theta_mmv(
    y: &DMatrix<C>,
    indices: &[usize],
    state: &SolverState,
    config: &SolverConfig,
) -> Result<Vec<Frequency>> {
    check(y, indices)?;
    if state.z_hat.ncols() != y.ncols() {
        return Err(Error::invalid("state and observations differ in snapshot count"));
    }
    descent_theta_matrix(y, indices, state, config)
}

/// `λ = d·M·L / ‖Y − AZ‖_F²`, capped at `lambda_max`.
pub fn update_lambda_mmv(
    y: &DMatrix<C>,
    theta: &[Frequency],
    z: &DMatrix<C>,
    d_factor: f64,
    lambda_max: f64,
    indices: &[usize],
) -> Result<f64> {
    check(y, indices)?;
    if z.nrows() != theta.len() || z.ncols() != y.ncols() {
        return Err(Error::invalid("coefficient matrix shape does not match theta and Y"));
    }
    let rss = crate::solver::residual_sq(y, &radians_of(theta), z, indices);
    Ok(crate::solver::lambda_from_residual(
        d_factor,
        y.nrows() * y.ncols(),
        rss,
        lambda_max,
    ))
}

/// Runs the reweighted iteration with a shared row support across all snapshots.
pub fn run_sure_ir_mmv(obs: &MmvObservations, config: &SolverConfig) -> Result<RowSparseEstimate> {
    let out = run_engine(&obs.y, &obs.sample_indices, config)?;
    let (freqs, coeff_matrix) = extract_support(&out, config);
    Ok(RowSparseEstimate {
        freqs,
        coeff_matrix,
        objective_trace: out.trace,
        iterations: out.iterations,
        final_lambda: out.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{random_instance, uniform_grid};
    use crate::solver::{f_theta, grad_f, solve_z, weight_matrix};

    fn two_column(seed: u64) -> (DMatrix<C>, Vec<usize>) {
        let a = random_instance(2, 32, 12, 20.0, seed).unwrap();
        let b = random_instance(2, 32, 12, 20.0, seed + 100).unwrap();
        // reuse the first instance's indices for both columns
        let yb: Vec<C> = a.sample_indices.iter().map(|&m| b.full_signal[m - 1]).collect();
        let mut y = DMatrix::zeros(12, 2);
        for r in 0..12 {
            y[(r, 0)] = a.observations[r];
            y[(r, 1)] = yb[r];
        }
        (y, a.sample_indices)
    }

    #[test]
    fn zero_matrix_weights_are_inverse_epsilon() {
        let w = weight_matrix_mmv(&DMatrix::zeros(3, 2), 1.0);
        assert_eq!(w.diag, vec![1.0; 3]);
    }

    #[test]
    fn single_column_weights_match_smv() {
        let z = vec![C::new(0.3, -1.0), C::new(2.0, 0.5)];
        let m = DMatrix::from_column_slice(2, 1, &z);
        assert_eq!(weight_matrix_mmv(&m, 1e-3), weight_matrix(&z, 1e-3));
    }

    #[test]
    fn row_weight_uses_row_norm() {
        let m = DMatrix::from_row_slice(1, 2, &[C::new(1.0, 0.0), C::new(1.0, 0.0)]);
        assert!((weight_matrix_mmv(&m, 1e-12).diag[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn columns_solve_independently() {
        let (y, idx) = two_column(3);
        let theta = uniform_grid(20).unwrap();
        let w = WeightMatrix {
            diag: (0..20).map(|i| 0.5 + i as f64 * 0.1).collect(),
        };
        let z = solve_z_mmv(&theta, &w, 3.0, &y, &idx).unwrap();
        for l in 0..2 {
            let col: Vec<C> = y.column(l).iter().copied().collect();
            let zl = solve_z(&theta, &w, 3.0, &col, &idx).unwrap();
            for n in 0..20 {
                assert!((z[(n, l)] - zl[n]).norm() <= 1e-12 * (1.0 + zl[n].norm()));
            }
        }
    }

    #[test]
    fn trace_and_gradient_are_sums_over_columns() {
        let (y, idx) = two_column(5);
        let theta: Vec<Frequency> = (0..6).map(|i| Frequency::new(0.9 * i as f64 + 0.2)).collect();
        let w = WeightMatrix {
            diag: vec![0.7, 1.1, 2.0, 0.4, 1.0, 3.0],
        };
        let f = f_theta_mmv(&theta, &w, 2.5, &y, &idx).unwrap();
        let g = grad_f_mmv(&theta, &w, 2.5, &y, &idx).unwrap();
        let mut fs = 0.0;
        let mut gs = vec![0.0; 6];
        for l in 0..2 {
            let col: Vec<C> = y.column(l).iter().copied().collect();
            fs += f_theta(&theta, &w, 2.5, &col, &idx).unwrap();
            for (a, b) in gs.iter_mut().zip(grad_f(&theta, &w, 2.5, &col, &idx).unwrap()) {
                *a += b;
            }
        }
        assert!((f - fs).abs() <= 1e-10 * fs.abs());
        for (a, b) in g.iter().zip(&gs) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_observations_give_zero_everything() {
        let y = DMatrix::zeros(4, 3);
        let idx = vec![1, 2, 3, 4];
        let theta = uniform_grid(5).unwrap();
        let w = WeightMatrix { diag: vec![1.0; 5] };
        assert!(solve_z_mmv(&theta, &w, 1.0, &y, &idx).unwrap().iter().all(|v| *v == C::new(0.0, 0.0)));
        assert_eq!(f_theta_mmv(&theta, &w, 1.0, &y, &idx).unwrap(), 0.0);
        assert!(grad_f_mmv(&theta, &w, 1.0, &y, &idx).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn observations_reject_bad_indices() {
        let y = DMatrix::zeros(2, 1);
        assert!(MmvObservations::new(y.clone(), vec![2, 1], 4).is_err());
        assert!(MmvObservations::new(y.clone(), vec![1, 5], 4).is_err());
        assert!(MmvObservations::new(DMatrix::zeros(2, 0), vec![1, 2], 4).is_err());
        assert!(MmvObservations::new(y, vec![1, 2], 4).is_ok());
    }
}
