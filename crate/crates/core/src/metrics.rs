//! Reconstruction and frequency-accuracy metrics.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{circular_distance, Frequency};

/// Reported in place of `+∞` when the reconstruction is exact.
pub const RSNR_CAP_DB: f64 = 300.0;

/// Frequency error below which a recovery with the right model order succeeds.
pub const SUCCESS_FREQ_TOL: f64 = 1e-3;

/// Largest model order matched by exhaustive search over permutations.
const EXHAUSTIVE_LIMIT: usize = 6;

/// `20·log10(‖y‖ / ‖y − ŷ‖)` in dB, capped at [`RSNR_CAP_DB`].
pub fn rsnr(reference: &[Complex64], reconstruction: &[Complex64]) -> Result<f64> {
    if reference.len() != reconstruction.len() {
        return Err(Error::invalid("reference and reconstruction differ in length"));
    }
    let signal: f64 = reference.iter().map(|v| v.norm_sqr()).sum();
    let error: f64 = reference
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    if signal == 0.0 {
        return Err(Error::invalid("reference signal has zero norm"));
    }
    if error == 0.0 {
        return Ok(RSNR_CAP_DB);
    }
    Ok((10.0 * (signal / error).log10()).clamp(-RSNR_CAP_DB, RSNR_CAP_DB))
}

/// Root-sum-square circular distance between matched frequencies, in cycles.
///
/// The pairing minimizes the total squared distance. Differing model orders give `+∞`.
pub fn match_frequencies(truth: &[Frequency], estimate: &[Frequency]) -> f64 {
    if truth.len() != estimate.len() {
        return f64::INFINITY;
    }
    let k = truth.len();
    if k == 0 {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|a| estimate.iter().map(|b| circular_distance(a.radians(), b.radians()).powi(2)).collect())
        .collect();
    let total = if k <= EXHAUSTIVE_LIMIT {
        best_permutation_cost(&cost)
    } else {
        greedy_swap_cost(&cost)
    };
    total.sqrt() / std::f64::consts::TAU
}

fn best_permutation_cost(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == cost.len() {
            *best = acc;
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

fn greedy_swap_cost(cost: &[Vec<f64>]) -> f64 {
    let k = cost.len();
    let mut used = vec![false; k];
    let mut assign = vec![0usize; k];
    for (i, row) in cost.iter().enumerate() {
        let j = (0..k)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| row[a].total_cmp(&row[b]))
            .expect("a column is free");
        used[j] = true;
        assign[i] = j;
    }
    loop {
        let mut improved = false;
        for a in 0..k {
            for b in a + 1..k {
                let now = cost[a][assign[a]] + cost[b][assign[b]];
                let swapped = cost[a][assign[b]] + cost[b][assign[a]];
                if swapped < now {
                    assign.swap(a, b);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Correct model order and matched frequency error within [`SUCCESS_FREQ_TOL`].
pub fn is_success(truth: &[Frequency], estimate: &[Frequency]) -> bool {
    match_frequencies(truth, estimate) <= SUCCESS_FREQ_TOL
}
