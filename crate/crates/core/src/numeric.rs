//! Small numerical helpers shared by the modules.

use rand::Rng;
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Standard normal CDF, accurate in the tails.
pub fn normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

/// Inverse-CDF draw from a probability vector. Falls back to the last
/// positive entry when round-off leaves the uniform draw past the total mass.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// `p log(p/q)` with `0 log 0 = 0`.
pub fn xlogy_ratio(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// Checks non-negativity and unit mass within `tol`.
pub fn check_distribution(name: &str, p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution(format!("{name}: empty")));
    }
    let mut sum = 0.0;
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || v < 0.0 || v > 1.0 + tol {
            return Err(Error::InvalidDistribution(format!(
                "{name}[{i}] = {v} is not a probability"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic matrix, or `None` when it is
/// not unique (the linear system `pi (P - I) = 0, sum pi = 1` is singular).
pub fn stationary_distribution(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    // Rows of A are the equations; the last balance equation is replaced by normalization.
    let mut a = vec![vec![0.0; n + 1]; n];
    for (eq, row) in a.iter_mut().enumerate().take(n - 1) {
        for (j, v) in row.iter_mut().enumerate().take(n) {
            *v = p[j][eq] - if j == eq { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n - 1][j] = 1.0;
    }
    a[n - 1][n] = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let pi: Vec<f64> = (0..n).map(|i| (a[i][n] / a[i][i]).max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    Some(pi.into_iter().map(|v| v / s).collect())
}

/// Mixed-radix index with the first digit most significant.
pub fn mixed_index(digits: &[usize], base: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * base + d)
}
