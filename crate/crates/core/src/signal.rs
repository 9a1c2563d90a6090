//! Complex-sinusoid mixture model and the parametric Vandermonde dictionary.
//!
//! A signal of length `T` is modelled as
//!
//! ```text
//! y_m = sum_k alpha_k * exp(-j * omega_k * m) + w_m,    m = 1..T
//! ```
//!
//! and only the rows listed in a set of 1-based sample indices are observed.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest distance between two angles on the circle, in radians.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

/// A frequency in radians, canonically wrapped into `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(f64);

impl Frequency {
    pub fn new(radians: f64) -> Self {
        Frequency(wrap_angle(radians))
    }

    pub fn from_cycles(cycles: f64) -> Self {
        Frequency::new(cycles * TAU)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Normalized frequency `ω / 2π` in `[0, 1)`.
    pub fn cycles(self) -> f64 {
        self.0 / TAU
    }

    pub fn distance(self, other: Frequency) -> f64 {
        circular_distance(self.0, other.0)
    }
}

impl From<Frequency> for f64 {
    fn from(f: Frequency) -> f64 {
        f.0
    }
}

pub(crate) fn radians_of(freqs: &[Frequency]) -> Vec<f64> {
    freqs.iter().map(|f| f.radians()).collect()
}

fn check_indices(indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::invalid("sample index set is empty"));
    }
    if indices.contains(&0) {
        return Err(Error::invalid("sample indices are 1-based; found 0"));
    }
    Ok(())
}

#[inline]
pub(crate) fn cexp_neg(omega: f64, m: usize) -> Complex64 {
    Complex64::from_polar(1.0, -omega * m as f64)
}

/// Sampled complex exponential `[e^{-jωm}]` for `m` in `indices`.
pub fn atom(omega: Frequency, indices: &[usize]) -> Result<DVector<Complex64>> {
    check_indices(indices)?;
    Ok(atom_unchecked(omega.radians(), indices))
}

/// Derivative of [`atom`] with respect to `ω`: entries `-j m e^{-jωm}`.
pub fn atom_derivative(omega: Frequency, indices: &[usize]) -> Result<DVector<Complex64>> {
    check_indices(indices)?;
    Ok(atom_derivative_unchecked(omega.radians(), indices))
}

pub(crate) fn atom_unchecked(omega: f64, indices: &[usize]) -> DVector<Complex64> {
    DVector::from_iterator(indices.len(), indices.iter().map(|&m| cexp_neg(omega, m)))
}

pub(crate) fn atom_derivative_unchecked(omega: f64, indices: &[usize]) -> DVector<Complex64> {
    DVector::from_iterator(
        indices.len(),
        indices
            .iter()
            .map(|&m| Complex64::new(0.0, -(m as f64)) * cexp_neg(omega, m)),
    )
}

pub(crate) fn dictionary_matrix(theta: &[f64], indices: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(indices.len(), theta.len(), |r, c| cexp_neg(theta[c], indices[r]))
}

pub(crate) fn dictionary_derivative_matrix(theta: &[f64], indices: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(indices.len(), theta.len(), |r, c| {
        let m = indices[r];
        Complex64::new(0.0, -(m as f64)) * cexp_neg(theta[c], m)
    })
}

/// The dictionary `A(θ) = [a(θ_1) … a(θ_N)]` restricted to a set of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricDictionary {
    theta: Vec<Frequency>,
    sample_indices: Vec<usize>,
    t: usize,
}

impl ParametricDictionary {
    pub fn theta(&self) -> &[Frequency] {
        &self.theta
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn signal_length(&self) -> usize {
        self.t
    }

    /// Number of atoms `N`.
    pub fn n_atoms(&self) -> usize {
        self.theta.len()
    }

    /// Number of retained rows `M`.
    pub fn n_rows(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        dictionary_matrix(&radians_of(&self.theta), &self.sample_indices)
    }

    /// Column-wise derivative `∂a(θ_n)/∂θ_n`.
    pub fn derivative_matrix(&self) -> DMatrix<Complex64> {
        dictionary_derivative_matrix(&radians_of(&self.theta), &self.sample_indices)
    }
}

/// Builds `A(θ)`; the signal length is taken to be the largest sample index.
pub fn build_dictionary(theta: &[Frequency], indices: &[usize]) -> Result<ParametricDictionary> {
    let t = indices.iter().copied().max().unwrap_or(0);
    build_dictionary_with_length(theta, indices, t)
}

pub fn build_dictionary_with_length(
    theta: &[Frequency],
    indices: &[usize],
    t: usize,
) -> Result<ParametricDictionary> {
    if theta.is_empty() {
        return Err(Error::invalid("dictionary needs at least one frequency"));
    }
    check_indices(indices)?;
    for w in indices.windows(2) {
        if w[0] == w[1] {
            return Err(Error::invalid(format!("duplicate sample index {}", w[0])));
        }
        if w[0] > w[1] {
            return Err(Error::invalid("sample indices must be strictly increasing"));
        }
    }
    if indices[indices.len() - 1] > t {
        return Err(Error::invalid(format!(
            "sample index {} exceeds signal length {t}",
            indices[indices.len() - 1]
        )));
    }
    Ok(ParametricDictionary {
        theta: theta.to_vec(),
        sample_indices: indices.to_vec(),
        t,
    })
}

/// `n` equispaced frequencies `2πi/n`, `i = 0..n-1`.
pub fn uniform_grid(n: usize) -> Result<Vec<Frequency>> {
    if n == 0 {
        return Err(Error::invalid("grid size must be positive"));
    }
    Ok((0..n).map(|i| Frequency::new(TAU * i as f64 / n as f64)).collect())
}

/// Noiseless mixture `sum_k amps_k e^{-j freqs_k m}` for `m = 1..t`.
pub fn synthesize(freqs: &[Frequency], amps: &[Complex64], t: usize) -> Result<Vec<Complex64>> {
    if freqs.len() != amps.len() {
        return Err(Error::invalid(format!(
            "{} frequencies but {} amplitudes",
            freqs.len(),
            amps.len()
        )));
    }
    Ok((1..=t)
        .map(|m| {
            freqs
                .iter()
                .zip(amps)
                .map(|(f, a)| a * cexp_neg(f.radians(), m))
                .sum()
        })
        .collect())
}

/// Noise variance implied by a PSNR in dB, `σ² = 10^{-psnr/10}`; infinite PSNR is noiseless.
pub fn noise_variance_for_psnr(psnr_db: f64) -> f64 {
    if psnr_db.is_infinite() && psnr_db > 0.0 {
        0.0
    } else {
        10f64.powf(-psnr_db / 10.0)
    }
}

/// Named, platform-independent generator used for every seeded draw.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One randomized line-spectral problem with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInstance {
    pub true_freqs: Vec<Frequency>,
    pub true_amps: Vec<Complex64>,
    /// Mixture plus the stored noise realization, length `T`.
    pub full_signal: Vec<Complex64>,
    pub observations: Vec<Complex64>,
    /// Strictly increasing, 1-based.
    pub sample_indices: Vec<usize>,
    pub noise_variance: f64,
    pub psnr_db: f64,
    pub seed: u64,
}

impl SpectralInstance {
    pub fn k(&self) -> usize {
        self.true_freqs.len()
    }

    pub fn t(&self) -> usize {
        self.full_signal.len()
    }

    pub fn m(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn clean_signal(&self) -> Vec<Complex64> {
        synthesize(&self.true_freqs, &self.true_amps, self.t()).expect("lengths agree")
    }

    pub fn observation_vector(&self) -> DVector<Complex64> {
        DVector::from_column_slice(&self.observations)
    }
}

fn unit_phasor<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random::<f64>() * TAU)
}

/// Draws `m` of `1..=t` uniformly without replacement, sorted.
pub fn draw_sample_indices<R: Rng>(rng: &mut R, t: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > t {
        return Err(Error::invalid(format!("need 1 <= m <= t, got m={m}, t={t}")));
    }
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, t, m)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Random instance with `k` uniform frequencies and unit-modulus amplitudes.
pub fn random_instance(k: usize, t: usize, m: usize, psnr_db: f64, seed: u64) -> Result<SpectralInstance> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut rng = seeded_rng(seed);
    let freqs: Vec<Frequency> = (0..k)
        .map(|_| Frequency::new(rng.random::<f64>() * TAU))
        .collect();
    let amps: Vec<Complex64> = (0..k).map(|_| unit_phasor(&mut rng)).collect();
    observe(freqs, amps, t, m, psnr_db, seed, &mut rng)
}

/// Two unit-amplitude tones separated by `mu / T` cycles, the first uniform on the circle.
pub fn two_tone_instance(mu: f64, t: usize, m: usize, psnr_db: f64, seed: u64) -> Result<SpectralInstance> {
    let mut rng = seeded_rng(seed);
    let first = rng.random::<f64>() * TAU;
    let freqs = vec![
        Frequency::new(first),
        Frequency::new(first + TAU * mu / t as f64),
    ];
    let amps = vec![unit_phasor(&mut rng), unit_phasor(&mut rng)];
    observe(freqs, amps, t, m, psnr_db, seed, &mut rng)
}

/// Instance built from given ground truth; sample indices and noise are drawn from `seed`.
pub fn instance_from_truth(
    freqs: Vec<Frequency>,
    amps: Vec<Complex64>,
    t: usize,
    m: usize,
    psnr_db: f64,
    seed: u64,
) -> Result<SpectralInstance> {
    let mut rng = seeded_rng(seed);
    observe(freqs, amps, t, m, psnr_db, seed, &mut rng)
}

fn observe<R: Rng>(
    freqs: Vec<Frequency>,
    amps: Vec<Complex64>,
    t: usize,
    m: usize,
    psnr_db: f64,
    seed: u64,
    rng: &mut R,
) -> Result<SpectralInstance> {
    if psnr_db.is_nan() {
        return Err(Error::invalid("psnr must not be NaN"));
    }
    let sample_indices = draw_sample_indices(rng, t, m)?;
    let noise_variance = noise_variance_for_psnr(psnr_db);
    let mut full_signal = synthesize(&freqs, &amps, t)?;
    if noise_variance > 0.0 {
        let s = (noise_variance / 2.0).sqrt();
        for v in full_signal.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(s * re, s * im);
        }
    }
    let observations = sample_indices.iter().map(|&i| full_signal[i - 1]).collect();
    Ok(SpectralInstance {
        true_freqs: freqs,
        true_amps: amps,
        full_signal,
        observations,
        sample_indices,
        noise_variance,
        psnr_db,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn atom_at_zero_is_all_ones() {
        let a = atom(Frequency::new(0.0), &[1, 2, 3]).unwrap();
        assert!(a.iter().all(|v| close(*v, Complex64::new(1.0, 0.0), 1e-15)));
    }

    #[test]
    fn atom_at_pi_alternates() {
        let a = atom(Frequency::new(PI), &[1, 2]).unwrap();
        assert!(close(a[0], Complex64::new(-1.0, 0.0), 1e-12));
        assert!(close(a[1], Complex64::new(1.0, 0.0), 1e-12));
    }

    #[test]
    fn atom_matches_direct_exponential() {
        let a = atom(Frequency::new(0.7), &[1, 5]).unwrap();
        assert!(close(a[0], Complex64::new(0.7f64.cos(), -0.7f64.sin()), 1e-15));
        assert!(close(a[1], Complex64::new(3.5f64.cos(), -3.5f64.sin()), 1e-15));
    }

    #[test]
    fn empty_indices_rejected() {
        assert!(matches!(atom(Frequency::new(1.0), &[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            atom_derivative(Frequency::new(1.0), &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn derivative_closed_forms() {
        let d = atom_derivative(Frequency::new(0.0), &[1, 2]).unwrap();
        assert!(close(d[0], Complex64::new(0.0, -1.0), 1e-15));
        assert!(close(d[1], Complex64::new(0.0, -2.0), 1e-15));
        let d = atom_derivative(Frequency::new(PI), &[1]).unwrap();
        assert!(close(d[0], Complex64::new(0.0, 1.0), 1e-12));
    }

    #[test]
    fn single_zero_frequency_dictionary_is_ones() {
        let d = build_dictionary(&[Frequency::new(0.0)], &[1, 2, 3, 4]).unwrap();
        let a = d.matrix();
        assert_eq!(a.shape(), (4, 1));
        assert!(a.iter().all(|v| close(*v, Complex64::new(1.0, 0.0), 1e-15)));
    }

    #[test]
    fn full_grid_dictionary_is_orthogonal() {
        let n = 4;
        let idx: Vec<usize> = (1..=n).collect();
        let d = build_dictionary(&uniform_grid(n).unwrap(), &idx).unwrap();
        let a = d.matrix();
        let gram = a.adjoint() * &a;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { n as f64 } else { 0.0 };
                assert!((gram[(i, j)] - Complex64::new(expect, 0.0)).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn repeated_frequency_gives_identical_columns() {
        let f = Frequency::new(1.3);
        let d = build_dictionary(&[f, f], &[1, 2, 3]).unwrap().matrix();
        assert_eq!(d.column(0), d.column(1));
    }

    #[test]
    fn duplicate_indices_rejected() {
        let r = build_dictionary(&[Frequency::new(0.0)], &[1, 2, 2]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        assert!(build_dictionary(&[], &[1]).is_err());
    }

    #[test]
    fn uniform_grid_values() {
        let g = uniform_grid(4).unwrap();
        let expect = [0.0, PI / 2.0, PI, 3.0 * PI / 2.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a.radians() - b).abs() < 1e-15);
        }
        assert_eq!(uniform_grid(1).unwrap(), vec![Frequency::new(0.0)]);
        let g = uniform_grid(64).unwrap();
        assert!((g[1].radians() - TAU / 64.0).abs() < 1e-15);
        assert!(uniform_grid(0).is_err());
    }

    #[test]
    fn synthesize_small_cases() {
        let s = synthesize(&[Frequency::new(0.0)], &[Complex64::new(1.0, 0.0)], 3).unwrap();
        assert!(s.iter().all(|v| close(*v, Complex64::new(1.0, 0.0), 1e-15)));
        let one = Complex64::new(1.0, 0.0);
        let s = synthesize(&[Frequency::new(0.0), Frequency::new(PI)], &[one, one], 2).unwrap();
        assert!(close(s[0], Complex64::new(0.0, 0.0), 1e-12));
        assert!(close(s[1], Complex64::new(2.0, 0.0), 1e-12));
        assert!(synthesize(&[Frequency::new(0.0)], &[], 2).is_err());
    }

    #[test]
    fn noiseless_instance_round_trips() {
        let inst = random_instance(3, 64, 20, f64::INFINITY, 11).unwrap();
        assert_eq!(inst.noise_variance, 0.0);
        let re = synthesize(&inst.true_freqs, &inst.true_amps, 64).unwrap();
        for (a, b) in re.iter().zip(&inst.full_signal) {
            assert!((a - b).norm() <= 1e-12);
        }
        for (&i, y) in inst.sample_indices.iter().zip(&inst.observations) {
            assert_eq!(*y, inst.full_signal[i - 1]);
        }
    }

    #[test]
    fn psnr_sets_noise_variance() {
        let inst = random_instance(2, 32, 10, 25.0, 3).unwrap();
        assert!((inst.noise_variance - 3.1622776601683795e-3).abs() < 1e-15);
    }

    #[test]
    fn instance_is_reproducible() {
        let a = random_instance(3, 64, 30, 25.0, 99).unwrap();
        let b = random_instance(3, 64, 30, 25.0, 99).unwrap();
        assert_eq!(a, b);
        let c = random_instance(3, 64, 30, 25.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn instance_invariants() {
        let inst = random_instance(4, 50, 17, 10.0, 5).unwrap();
        assert!(inst.true_amps.iter().all(|a| (a.norm() - 1.0).abs() < 1e-12));
        assert!(inst.sample_indices.windows(2).all(|w| w[0] < w[1]));
        assert!(inst.sample_indices.iter().all(|&i| (1..=50).contains(&i)));
        assert!(random_instance(1, 10, 11, 10.0, 0).is_err());
    }

    #[test]
    fn two_tone_spacing() {
        let inst = two_tone_instance(0.8, 64, 20, 15.0, 4).unwrap();
        let d = inst.true_freqs[0].distance(inst.true_freqs[1]);
        assert!((d - TAU * 0.8 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_and_distance_on_torus() {
        assert_eq!(wrap_angle(-1e-30), 0.0);
        assert!((wrap_angle(TAU + 0.5) - 0.5).abs() < 1e-12);
        let d = circular_distance(1e-6, TAU - 1e-5);
        assert!((d - 1.1e-5).abs() < 1e-12);
    }
}
