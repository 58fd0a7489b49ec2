//! System model: private Markov chain, scalar conditional-linear-Gaussian
//! dynamics, quantized measurements, output tessellation and closed-loop
//! trajectory sampling.
//!
//! Dynamics and measurement maps take and return state vectors so that the
//! signatures do not change for vector-valued extensions; only `n = 1` is
//! implemented.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numeric::{check_distribution, sample_categorical, stationary_distribution};
use crate::policy::{HistoryWindow, PolicyParams};
use crate::rng::{split_seed, stream};
use crate::{Error, Result};

/// Markov chain over private labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateChain {
    labels: Vec<i64>,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl PrivateChain {
    pub fn new(labels: Vec<i64>, transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Config("private chain has no states".into()));
        }
        if transition.len() != n {
            return Err(Error::Config(format!(
                "transition has {} rows for {n} states",
                transition.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "transition row {i} has {} entries for {n} states",
                    row.len()
                )));
            }
            check_distribution(&format!("transition row {i}"), row, 1e-12)?;
        }
        if initial.len() != n {
            return Err(Error::Config(format!(
                "initial distribution has {} entries for {n} states",
                initial.len()
            )));
        }
        check_distribution("initial distribution", &initial, 1e-12)?;
        Ok(Self { labels, transition, initial })
    }

    /// Chain started from the stationary law of `transition`, or from the
    /// uniform law when the stationary law is not unique.
    pub fn with_stationary_start(labels: Vec<i64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 || transition.len() != n || transition.iter().any(|r| r.len() != n) {
            return Err(Error::Config("transition matrix shape does not match the labels".into()));
        }
        let initial =
            stationary_distribution(&transition).unwrap_or_else(|| vec![1.0 / n as f64; n]);
        Self::new(labels, transition, initial)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> i64 {
        self.labels[state]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        sample_categorical(&self.transition[state], rng)
    }
}

/// Samples `y[0..=horizon]` with `y[0]` from the initial law.
pub fn sample_private_path<R: Rng + ?Sized>(
    chain: &PrivateChain,
    horizon: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut path = Vec::with_capacity(horizon + 1);
    let mut y = chain.sample_initial(rng);
    path.push(y);
    for _ in 0..horizon {
        y = chain.sample_next(y, rng);
        path.push(y);
    }
    path
}

/// `x' = a x + b y + w`, `w ~ N(0, sigma_w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinGaussDynamics {
    pub a: f64,
    pub b: f64,
    pub sigma_w: f64,
}

impl LinGaussDynamics {
    pub fn new(a: f64, b: f64, sigma_w: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Config("dynamics coefficients must be finite".into()));
        }
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::Config(format!("sigma_w must be positive, got {sigma_w}")));
        }
        Ok(Self { a, b, sigma_w })
    }

    pub fn mean(&self, x: f64, label: i64) -> f64 {
        self.a * x + self.b * label as f64
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], label: i64, rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|&xi| {
                let w: f64 = rng.sample(StandardNormal);
                self.mean(xi, label) + self.sigma_w * w
            })
            .collect()
    }
}

pub fn step_dynamics<R: Rng + ?Sized>(
    dynamics: &LinGaussDynamics,
    x: &[f64],
    label: i64,
    rng: &mut R,
) -> Vec<f64> {
    dynamics.step(x, label, rng)
}

/// `z = c x + v`, `v ~ N(0, sigma_v^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub c: f64,
    pub sigma_v: f64,
}

impl MeasurementModel {
    pub fn new(c: f64, sigma_v: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Config("measurement coefficient must be finite".into()));
        }
        if !(sigma_v > 0.0 && sigma_v.is_finite()) {
            return Err(Error::Config(format!("sigma_v must be positive, got {sigma_v}")));
        }
        Ok(Self { c, sigma_v })
    }

    pub fn measure<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|&xi| {
                let v: f64 = rng.sample(StandardNormal);
                self.c * xi + self.sigma_v * v
            })
            .collect()
    }
}

/// Uniform partition of `[lo, hi)` into half-open cells of width `width`;
/// values outside the bounds are clipped into the end cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformCells {
    width: f64,
    lo: f64,
    hi: f64,
    count: usize,
}

/// Measurement quantizer (cells `B^z_i`).
pub type Quantizer = UniformCells;
/// Output tessellation of the state space (cells `B^x_i`).
pub type Tessellation = UniformCells;

impl UniformCells {
    pub fn new(width: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Config(format!("cell width must be positive, got {width}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Config(format!("empty cell range [{lo}, {hi})")));
        }
        let span = hi - lo;
        let count = (span / width).round();
        if count < 1.0 || (count * width - span).abs() > 1e-12 * span.max(1.0) {
            return Err(Error::Config(format!(
                "range [{lo}, {hi}) is not a whole number of cells of width {width}"
            )));
        }
        if count > 1e6 {
            return Err(Error::Config(format!("{count} cells is too many")));
        }
        Ok(Self { width, lo, hi, count: count as usize })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cell(&self, v: f64) -> usize {
        let i = ((v - self.lo) / self.width).floor();
        if i.is_nan() || i < 0.0 {
            0
        } else {
            (i as usize).min(self.count - 1)
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.center(i)).collect()
    }

    /// Lower and upper edge of cell `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        (self.lo + i as f64 * self.width, self.lo + (i + 1) as f64 * self.width)
    }

    /// Splits every cell into `factor` equal sub-cells.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be at least 1".into()));
        }
        Ok(Self {
            width: self.width / factor as f64,
            lo: self.lo,
            hi: self.hi,
            count: self.count * factor,
        })
    }
}

/// Draws `z = c x + v` and its quantizer cell.
pub fn measure_and_quantize<R: Rng + ?Sized>(
    measurement: &MeasurementModel,
    quantizer: &Quantizer,
    x: &[f64],
    rng: &mut R,
) -> (f64, usize) {
    let z = measurement.measure(x, rng)[0];
    (z, quantizer.cell(z))
}

/// Closed-loop sampling interface. `State` is the system state; finite
/// surrogates use a cell index, the continuous model a state vector.
pub trait Simulator {
    type State: Clone;

    fn n_private(&self) -> usize;
    fn n_meas_cells(&self) -> usize;
    fn private_label(&self, y: usize) -> i64;
    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Self::State);
    /// Advances `(y_t, x_t)` to `(y_{t+1}, x_{t+1})`.
    fn advance<R: Rng + ?Sized>(&self, y: usize, x: &Self::State, rng: &mut R) -> (usize, Self::State);
    /// Measurement value and its quantizer cell.
    fn observe<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> (f64, usize);
    /// Scalar value of the state used by the distortion.
    fn state_value(&self, x: &Self::State) -> f64;
}

/// The continuous system with its quantizer and output tessellation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub chain: PrivateChain,
    pub dynamics: LinGaussDynamics,
    pub measurement: MeasurementModel,
    pub quantizer: Quantizer,
    pub tessellation: Tessellation,
    pub x0: f64,
}

impl Simulator for SystemModel {
    type State = Vec<f64>;

    fn n_private(&self) -> usize {
        self.chain.len()
    }

    fn n_meas_cells(&self) -> usize {
        self.quantizer.len()
    }

    fn private_label(&self, y: usize) -> i64 {
        self.chain.label(y)
    }

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        (self.chain.sample_initial(rng), vec![self.x0])
    }

    fn advance<R: Rng + ?Sized>(&self, y: usize, x: &Vec<f64>, rng: &mut R) -> (usize, Vec<f64>) {
        let x_next = self.dynamics.step(x, self.chain.label(y), rng);
        (self.chain.sample_next(y, rng), x_next)
    }

    fn observe<R: Rng + ?Sized>(&self, x: &Vec<f64>, rng: &mut R) -> (f64, usize) {
        measure_and_quantize(&self.measurement, &self.quantizer, x, rng)
    }

    fn state_value(&self, x: &Vec<f64>) -> f64 {
        x[0]
    }
}

/// One closed-loop realization over `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub seed: u64,
    /// Private chain state indices.
    pub y: Vec<usize>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub z_cell: Vec<usize>,
    pub xhat: Vec<usize>,
}

/// `K` rollouts over a common horizon, in rollout-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub horizon: usize,
    pub rollouts: Vec<Rollout>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    /// CSV with header `rollout,t,y,x,z,z_cell,xhat_cell,xhat_center`; `y` is
    /// written as the chain label.
    pub fn to_csv(&self, labels: &[i64], tessellation: &Tessellation) -> String {
        let mut out = String::from("rollout,t,y,x,z,z_cell,xhat_cell,xhat_center\n");
        for (k, r) in self.rollouts.iter().enumerate() {
            for t in 0..=self.horizon {
                let _ = writeln!(
                    out,
                    "{k},{t},{},{},{},{},{},{}",
                    labels[r.y[t]],
                    r.x[t],
                    r.z[t],
                    r.z_cell[t],
                    r.xhat[t],
                    tessellation.center(r.xhat[t])
                );
            }
        }
        out
    }
}

/// Samples one closed-loop rollout from its own seed.
pub fn rollout_one<S: Simulator>(
    sim: &S,
    policy: &PolicyParams,
    horizon: usize,
    seed: u64,
) -> Result<Rollout> {
    let mut rng = stream(seed);
    let mut r = Rollout {
        seed,
        y: Vec::with_capacity(horizon + 1),
        x: Vec::with_capacity(horizon + 1),
        z: Vec::with_capacity(horizon + 1),
        z_cell: Vec::with_capacity(horizon + 1),
        xhat: Vec::with_capacity(horizon + 1),
    };
    let (mut y, mut x) = sim.initial(&mut rng);
    for t in 0..=horizon {
        let (z, zc) = sim.observe(&x, &mut rng);
        r.y.push(y);
        r.x.push(sim.state_value(&x));
        r.z.push(z);
        r.z_cell.push(zc);
        let h = HistoryWindow::from_history(policy.depth(), policy.n_z(), policy.n_out(), &r.z_cell, &r.xhat);
        let probs = policy.dist(&h)?;
        r.xhat.push(sample_categorical(&probs, &mut rng));
        if t < horizon {
            let (y_next, x_next) = sim.advance(y, &x, &mut rng);
            y = y_next;
            x = x_next;
        }
    }
    Ok(r)
}

/// `K` closed-loop rollouts; rollout `k` uses `split_seed(master_seed, k)`.
pub fn rollout<S: Simulator>(
    sim: &S,
    policy: &PolicyParams,
    horizon: usize,
    master_seed: u64,
    k: usize,
) -> Result<TrajectoryBatch> {
    if policy.n_z() != sim.n_meas_cells() {
        return Err(Error::Config(format!(
            "policy expects {} measurement cells, system has {}",
            policy.n_z(),
            sim.n_meas_cells()
        )));
    }
    let rollouts = (0..k)
        .map(|i| rollout_one(sim, policy, horizon, split_seed(master_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch { horizon, rollouts })
}
