//! Classical grid-MMSE estimation and the additive-Gaussian-noise mechanism.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::{accuracy, viterbi, AccuracySummary, DecoderHMM, Emission, Observations};
use crate::finite::FiniteSystem;
use crate::model::{rollout, Simulator, TrajectoryBatch};
use crate::policy::PolicyParams;
use crate::rng::{domain_seed, stream};
use crate::{Error, Result};

/// `E[X_t | z̃^t]` at every `t`, by a forward filter over `(y, x-cell)`.
pub fn grid_mmse(fs: &FiniteSystem, z_cells: &[usize]) -> Result<Vec<f64>> {
    let (ny, nx) = (fs.ny, fs.nx);
    let mut alpha = vec![0.0; ny * nx];
    let mut out = Vec::with_capacity(z_cells.len());
    for (t, &z) in z_cells.iter().enumerate() {
        if z >= fs.nz {
            return Err(Error::Config(format!("measurement cell {z} at t={t} out of range")));
        }
        let mut next = vec![0.0; ny * nx];
        if t == 0 {
            for y in 0..ny {
                for x in 0..nx {
                    next[y * nx + x] = fs.mu_y0[y] * fs.mu_x0[x];
                }
            }
        } else {
            for y in 0..ny {
                for x in 0..nx {
                    let a = alpha[y * nx + x];
                    if a == 0.0 {
                        continue;
                    }
                    for y2 in 0..ny {
                        let py = a * fs.py[y][y2];
                        if py == 0.0 {
                            continue;
                        }
                        for x2 in 0..nx {
                            next[y2 * nx + x2] += py * fs.px[x][x2][y];
                        }
                    }
                }
            }
        }
        for (s, v) in next.iter_mut().enumerate() {
            *v *= fs.pz[s % nx][z];
        }
        let total: f64 = next.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ImpossibleObservation(t));
        }
        next.iter_mut().for_each(|v| *v /= total);
        out.push(next.iter().enumerate().map(|(s, p)| p * fs.centers[s % nx]).sum());
        alpha = next;
    }
    Ok(out)
}

/// Adds i.i.d. `N(0, sigma^2)` noise.
pub fn perturb<R: Rng + ?Sized>(estimates: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise std must be finite and >= 0, got {sigma}")));
    }
    Ok(estimates.iter().map(|e| e + sigma * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// One point of the additive-noise curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub sigma: f64,
    /// Mean over rollouts of `sum_t (x_t - x̂_t)^2`.
    pub distortion: f64,
    pub distortion_se: f64,
    pub accuracy: AccuracySummary,
}

/// Per-rollout series at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrace {
    pub x: Vec<f64>,
    pub mmse: Vec<f64>,
    pub noisy: Vec<f64>,
    pub y: Vec<usize>,
    pub yhat: Vec<usize>,
}

/// Measurement-only rollouts: a one-output policy never influences the system.
pub fn open_loop_rollouts<S: Simulator>(sim: &S, horizon: usize, k: usize, seed: u64) -> Result<TrajectoryBatch> {
    let silent = PolicyParams::tabular(0, sim.n_meas_cells(), 1)?;
    rollout(sim, &silent, horizon, seed, k)
}

/// Shared inputs of a sweep: MMSE estimates of a fixed batch.
#[derive(Debug, Clone)]
pub struct BaselineSweep {
    pub batch: TrajectoryBatch,
    pub mmse: Vec<Vec<f64>>,
    /// Adversary std on unperturbed estimates, combined in quadrature with `sigma`.
    pub base_sigma: f64,
    seed: u64,
}

impl BaselineSweep {
    pub fn new<S: Simulator>(
        sim: &S,
        fs: &FiniteSystem,
        horizon: usize,
        k: usize,
        base_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("baseline needs at least one rollout".into()));
        }
        let batch = open_loop_rollouts(sim, horizon, k, domain_seed(seed, "baseline-rollouts", 0))?;
        let mmse = batch.rollouts.iter().map(|r| grid_mmse(fs, &r.z_cell)).collect::<Result<_>>()?;
        Ok(Self { batch, mmse, base_sigma, seed })
    }

    /// Noisy estimates and decoded private paths at `sigma`. Every noise level
    /// reuses the same standard-normal draws.
    pub fn traces(&self, fs: &FiniteSystem, sigma: f64) -> Result<Vec<BaselineTrace>> {
        let sd = (self.base_sigma * self.base_sigma + sigma * sigma).sqrt();
        let hmm = DecoderHMM::new(fs, Emission::Gaussian { means: fs.centers.clone(), sigma: sd })?;
        self.batch
            .rollouts
            .iter()
            .zip(&self.mmse)
            .enumerate()
            .map(|(k, (r, m))| {
                let mut rng = stream(domain_seed(self.seed, "perturb", k as u64));
                let noisy = perturb(m, sigma, &mut rng)?;
                let yhat = viterbi(&hmm, &Observations::Values(noisy.clone()))?.ys;
                Ok(BaselineTrace { x: r.x.clone(), mmse: m.clone(), noisy, y: r.y.clone(), yhat })
            })
            .collect()
    }

    pub fn point(&self, fs: &FiniteSystem, sigma: f64) -> Result<BaselinePoint> {
        let traces = self.traces(fs, sigma)?;
        let dist: Vec<f64> =
            traces.iter().map(|t| t.x.iter().zip(&t.noisy).map(|(x, e)| (x - e) * (x - e)).sum()).collect();
        let acc = traces.iter().map(|t| accuracy(&t.yhat, &t.y)).collect::<Result<Vec<_>>>()?;
        let n = dist.len() as f64;
        let mean = dist.iter().sum::<f64>() / n;
        let var = if dist.len() > 1 { dist.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Ok(BaselinePoint {
            sigma,
            distortion: mean,
            distortion_se: (var / n).sqrt(),
            accuracy: AccuracySummary::from_accuracies(&acc, self.batch.horizon + 1),
        })
    }
}

/// `(sigma, distortion, accuracy)` over a noise grid on common random numbers.
pub fn baseline_sweep<S: Simulator>(
    sim: &S,
    fs: &FiniteSystem,
    sigmas: &[f64],
    horizon: usize,
    k: usize,
    base_sigma: f64,
    seed: u64,
) -> Result<Vec<BaselinePoint>> {
    if sigmas.is_empty() {
        return Err(Error::Config("empty noise grid".into()));
    }
    let sweep = BaselineSweep::new(sim, fs, horizon, k, base_sigma, seed)?;
    sigmas.iter().map(|&s| sweep.point(fs, s)).collect()
}
