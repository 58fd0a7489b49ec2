//! Maximum-likelihood inference of the private path.
//!
//! The adversary decodes an observation sequence with Viterbi over the
//! product chain of `(y, x-cell)` pairs of a finite system. Observations are
//! either real values (quantized measurements or noisy estimates) scored by a
//! Gaussian density around a per-cell mean, or categorical symbols scored by
//! an emission table estimated from held-out rollouts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::finite::FiniteSystem;
use crate::numeric::normal_pdf;
use crate::{Error, Result};

/// Smallest emission probability (or density) used in the log domain.
pub const EMISSION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryMode {
    /// Gaussian density around per-cell means.
    #[default]
    Gaussian,
    /// Empirical emission table with Laplace smoothing.
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// `N(obs; means[x], sigma^2)`.
    Gaussian { means: Vec<f64>, sigma: f64 },
    /// `probs[x][symbol]`.
    Table { probs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Values(Vec<f64>),
    Symbols(Vec<usize>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Values(v) => v.len(),
            Observations::Symbols(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// HMM over hidden states `s = y * nx + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHMM {
    pub ny: usize,
    pub nx: usize,
    log_init: Vec<f64>,
    /// `log_trans[s][s']`.
    log_trans: Vec<Vec<f64>>,
    emission: Emission,
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

impl DecoderHMM {
    pub fn new(fs: &FiniteSystem, emission: Emission) -> Result<Self> {
        fs.validate()?;
        let (ny, nx) = (fs.ny, fs.nx);
        match &emission {
            Emission::Gaussian { means, sigma } => {
                if means.len() != nx {
                    return Err(Error::LengthMismatch { left: means.len(), right: nx });
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("adversary sigma must be finite and > 0, got {sigma}")));
                }
            }
            Emission::Table { probs } => {
                if probs.len() != nx {
                    return Err(Error::LengthMismatch { left: probs.len(), right: nx });
                }
                for (x, row) in probs.iter().enumerate() {
                    crate::numeric::check_distribution(&format!("emission[{x}]"), row, 1e-10)?;
                }
            }
        }
        let s = ny * nx;
        let mut log_init = vec![0.0; s];
        let mut log_trans = vec![vec![0.0; s]; s];
        for y in 0..ny {
            for x in 0..nx {
                log_init[y * nx + x] = ln(fs.mu_y0[y] * fs.mu_x0[x]);
                for y2 in 0..ny {
                    for x2 in 0..nx {
                        log_trans[y * nx + x][y2 * nx + x2] = ln(fs.py[y][y2] * fs.px[x][x2][y]);
                    }
                }
            }
        }
        Ok(Self { ny, nx, log_init, log_trans, emission })
    }

    pub fn n_states(&self) -> usize {
        self.ny * self.nx
    }

    pub fn emission(&self) -> &Emission {
        &self.emission
    }

    fn log_emissions(&self, obs: &Observations, t: usize) -> Result<Vec<f64>> {
        let per_x: Vec<f64> = match (&self.emission, obs) {
            (Emission::Gaussian { means, sigma }, Observations::Values(v)) => {
                means.iter().map(|&m| normal_pdf(v[t], m, *sigma).max(EMISSION_FLOOR).ln()).collect()
            }
            (Emission::Table { probs }, Observations::Symbols(v)) => {
                let k = v[t];
                if k >= probs[0].len() {
                    return Err(Error::Config(format!("observation symbol {k} at t={t} out of range")));
                }
                probs.iter().map(|row| row[k].max(EMISSION_FLOOR).ln()).collect()
            }
            _ => return Err(Error::Config("observation type does not match the emission model".into())),
        };
        Ok((0..self.n_states()).map(|s| per_x[s % self.nx]).collect())
    }

    /// Joint log-likelihood of a hidden path and the observations.
    pub fn path_log_likelihood(&self, states: &[usize], obs: &Observations) -> Result<f64> {
        if states.len() != obs.len() {
            return Err(Error::LengthMismatch { left: states.len(), right: obs.len() });
        }
        let mut ll = 0.0;
        for (t, &s) in states.iter().enumerate() {
            ll += if t == 0 { self.log_init[s] } else { self.log_trans[states[t - 1]][s] };
            ll += self.log_emissions(obs, t)?[s];
        }
        Ok(ll)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// Private states `y_t = s_t / nx`.
    pub ys: Vec<usize>,
    pub log_likelihood: f64,
}

/// Most likely hidden path. Ties go to the lower state index, both for the
/// final state and for every back-pointer.
pub fn viterbi(hmm: &DecoderHMM, obs: &Observations) -> Result<ViterbiPath> {
    if obs.is_empty() {
        return Err(Error::Config("empty observation sequence".into()));
    }
    let n = hmm.n_states();
    let steps = obs.len();
    let e0 = hmm.log_emissions(obs, 0)?;
    let mut delta: Vec<f64> = (0..n).map(|s| hmm.log_init[s] + e0[s]).collect();
    if delta.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::ImpossibleObservation(0));
    }
    let mut back = vec![vec![0usize; n]; steps];
    let mut next = vec![0.0; n];
    for t in 1..steps {
        let e = hmm.log_emissions(obs, t)?;
        for s2 in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for s in 0..n {
                let v = delta[s] + hmm.log_trans[s][s2];
                if v > best {
                    best = v;
                    arg = s;
                }
            }
            next[s2] = best + e[s2];
            back[t][s2] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
        if delta.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ImpossibleObservation(t));
        }
    }
    let mut last = 0;
    for s in 1..n {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let log_likelihood = delta[last];
    let mut states = vec![last; steps];
    for t in (1..steps).rev() {
        states[t - 1] = back[t][states[t]];
    }
    let ys = states.iter().map(|s| s / hmm.nx).collect();
    Ok(ViterbiPath { states, ys, log_likelihood })
}

/// Emission table `P(symbol | x-cell)` from paired sequences, with additive
/// smoothing on every cell.
pub fn empirical_emissions(
    x_cells: &[Vec<usize>],
    symbols: &[Vec<usize>],
    nx: usize,
    n_symbols: usize,
    smoothing: f64,
) -> Result<Vec<Vec<f64>>> {
    if x_cells.len() != symbols.len() {
        return Err(Error::LengthMismatch { left: x_cells.len(), right: symbols.len() });
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) || n_symbols == 0 {
        return Err(Error::Config(format!("invalid emission smoothing {smoothing} or alphabet {n_symbols}")));
    }
    let mut counts = vec![vec![smoothing; n_symbols]; nx];
    for (xs, os) in x_cells.iter().zip(symbols) {
        if xs.len() != os.len() {
            return Err(Error::LengthMismatch { left: xs.len(), right: os.len() });
        }
        for (&x, &o) in xs.iter().zip(os) {
            if x >= nx || o >= n_symbols {
                return Err(Error::Config(format!("cell {x} or symbol {o} out of range")));
            }
            counts[x][o] += 1.0;
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.into_iter().map(|c| c / s).collect()
            } else {
                vec![1.0 / n_symbols as f64; n_symbols]
            }
        })
        .collect())
}

/// Fraction of time steps with `yhat_t = y_t`.
pub fn accuracy(yhat: &[usize], y: &[usize]) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::LengthMismatch { left: yhat.len(), right: y.len() });
    }
    if y.is_empty() {
        return Err(Error::Config("accuracy of an empty sequence".into()));
    }
    Ok(yhat.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
}

/// `1{yhat_t != y_t}` per step.
pub fn misdetections(yhat: &[usize], y: &[usize]) -> Result<Vec<u8>> {
    if yhat.len() != y.len() {
        return Err(Error::LengthMismatch { left: yhat.len(), right: y.len() });
    }
    Ok(yhat.iter().zip(y).map(|(a, b)| u8::from(a != b)).collect())
}

/// Per-rollout accuracies and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub accuracy_mean: f64,
    /// Sample standard deviation across rollouts.
    pub accuracy_std: f64,
    pub rollouts: usize,
    /// Mean misdetection count per rollout.
    pub misdetections_mean: f64,
    pub misdetections_std: f64,
}

impl AccuracySummary {
    pub fn from_accuracies(acc: &[f64], steps: usize) -> Self {
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n.max(1.0);
        let var = if acc.len() > 1 { acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std = var.sqrt();
        Self {
            accuracy_mean: mean,
            accuracy_std: std,
            rollouts: acc.len(),
            misdetections_mean: (1.0 - mean) * steps as f64,
            misdetections_std: std * steps as f64,
        }
    }

    /// Standard error of the mean accuracy.
    pub fn accuracy_se(&self) -> f64 {
        self.accuracy_std / (self.rollouts.max(1) as f64).sqrt()
    }
}

/// CSV `t,y,yhat,miss` with private states written as labels.
pub fn trajectory_csv(labels: &[i64], y: &[usize], yhat: &[usize]) -> Result<String> {
    let miss = misdetections(yhat, y)?;
    let mut out = String::from("t,y,yhat,miss\n");
    for t in 0..y.len() {
        let _ = writeln!(out, "{t},{},{},{}", labels[y[t]], labels[yhat[t]], miss[t]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_edge_cases() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(misdetections(&[0, 2], &[0, 1]).unwrap(), vec![0, 1]);
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn smoothing_keeps_rows_normalized() {
        let t = empirical_emissions(&[vec![0, 0, 1]], &[vec![1, 1, 0]], 3, 2, 1.0).unwrap();
        assert_eq!(t[0], vec![0.25, 0.75]);
        assert_eq!(t[2], vec![0.5, 0.5]);
    }
}
