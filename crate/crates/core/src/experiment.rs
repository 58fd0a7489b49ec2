//! Experiment drivers behind the command line tool.
//!
//! Every driver is a pure function of the configuration and its seed; random
//! streams are split by purpose with [`domain_seed`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adversary::{
    accuracy, empirical_emissions, misdetections, viterbi, AccuracySummary, AdversaryMode, DecoderHMM, Emission,
    Observations,
};
use crate::baseline::{BaselinePoint, BaselineSweep};
use crate::config::Config;
use crate::finite::FiniteSystem;
use crate::infoloss::CriticParams;
use crate::model::{rollout, Tessellation, TrajectoryBatch};
use crate::policy::PolicyParams;
use crate::rng::domain_seed;
use crate::trainer::{train, TrainReport};
use crate::{Error, Result};

/// Everything derived from a configuration that the drivers share.
pub struct Setup {
    pub cfg: Config,
    pub model: crate::model::SystemModel,
    /// Finite surrogate on the state grid.
    pub fs: FiniteSystem,
    pub grid: Tessellation,
    pub distortion: crate::loss::Distortion,
}

impl Setup {
    pub fn new(cfg: Config) -> Result<Self> {
        let model = cfg.model()?;
        let disc = cfg.discretize()?;
        Ok(Self { grid: cfg.state_grid()?, distortion: cfg.distortion()?, fs: disc.system, model, cfg })
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon.t
    }

    pub fn labels(&self) -> &[i64] {
        self.model.chain.labels()
    }

    pub fn initial_policy(&self) -> Result<PolicyParams> {
        self.cfg.train_config().initial_policy(self.model.quantizer.len(), self.model.tessellation.len())
    }

    /// The configured initial policy, fitted to the cells of the grid-MMSE
    /// estimates when `train.pretrain_iters > 0`.
    pub fn starting_policy(&self, seed: u64) -> Result<PolicyParams> {
        let mut policy = self.initial_policy()?;
        let tc = &self.cfg.train;
        if tc.pretrain_iters > 0 {
            let batch = crate::baseline::open_loop_rollouts(
                &self.model,
                self.horizon(),
                tc.pretrain_rollouts.max(1),
                domain_seed(seed, "pretrain", 0),
            )?;
            let mut zs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for r in &batch.rollouts {
                let est = crate::baseline::grid_mmse(&self.fs, &r.z_cell)?;
                targets.push(est.iter().map(|&e| self.model.tessellation.cell(e)).collect());
                zs.push(r.z_cell.clone());
            }
            let ll = crate::trainer::imitate(&mut policy, &zs, &targets, tc.pretrain_step, tc.pretrain_iters)?;
            log::info!("pretrained policy: mean log-likelihood {ll:.4}");
        }
        Ok(policy)
    }

    pub fn initial_critics(&self) -> Result<CriticParams> {
        self.cfg.train_config().initial_critics(self.model.tessellation.len(), self.model.chain.len(), self.horizon())
    }

    fn x_cells(&self, batch: &TrajectoryBatch) -> Vec<Vec<usize>> {
        batch.rollouts.iter().map(|r| r.x.iter().map(|&x| self.grid.cell(x)).collect()).collect()
    }

    /// Decoder for raw quantized measurements: cell centers against `c x`.
    pub fn raw_decoder(&self) -> Result<DecoderHMM> {
        let c = self.model.measurement.c;
        let means = self.fs.centers.iter().map(|x| c * x).collect();
        DecoderHMM::new(&self.fs, Emission::Gaussian { means, sigma: self.cfg.sigma_adv() })
    }

    /// Decoder for a policy's outputs, per the configured adversary mode.
    pub fn policy_decoder(&self, policy: &PolicyParams, seed: u64) -> Result<DecoderHMM> {
        match self.cfg.adversary.mode {
            AdversaryMode::Gaussian => DecoderHMM::new(
                &self.fs,
                Emission::Gaussian { means: self.fs.centers.clone(), sigma: self.cfg.sigma_adv() },
            ),
            AdversaryMode::Table => {
                let held = rollout(
                    &self.model,
                    policy,
                    self.horizon(),
                    domain_seed(seed, "adversary-holdout", 0),
                    self.cfg.adversary.holdout.max(1),
                )?;
                let symbols: Vec<Vec<usize>> = held.rollouts.iter().map(|r| r.xhat.clone()).collect();
                let probs = empirical_emissions(
                    &self.x_cells(&held),
                    &symbols,
                    self.fs.nx,
                    policy.n_out(),
                    self.cfg.adversary.smoothing,
                )?;
                DecoderHMM::new(&self.fs, Emission::Table { probs })
            }
        }
    }

    fn policy_observations(&self, hmm: &DecoderHMM, xhat: &[usize]) -> Observations {
        match hmm.emission() {
            Emission::Table { .. } => Observations::Symbols(xhat.to_vec()),
            Emission::Gaussian { .. } => {
                Observations::Values(xhat.iter().map(|&c| self.distortion.center(c)).collect())
            }
        }
    }
}

/// Series of one rollout for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub y: Vec<usize>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// The shared estimate (output cell center, or the noisy MMSE value).
    pub output: Vec<f64>,
    pub yhat: Vec<usize>,
}

impl Trace {
    /// CSV `t,y,x,z,output,yhat,miss` with private states as labels.
    pub fn to_csv(&self, labels: &[i64]) -> String {
        let miss = misdetections(&self.yhat, &self.y).expect("aligned trace");
        let mut out = String::from("t,y,x,z,output,yhat,miss\n");
        for t in 0..self.y.len() {
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{},{}",
                labels[self.y[t]], self.x[t], self.z[t], self.output[t], labels[self.yhat[t]], miss[t]
            );
        }
        out
    }
}

/// Distortion and adversary accuracy of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    /// Mean over rollouts of `sum_t l_d(x_t, x̂_t)`.
    pub distortion: f64,
    pub distortion_se: f64,
    pub accuracy: AccuracySummary,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Adversary accuracy on raw quantized measurements.
pub fn motivating(setup: &Setup, rollouts: usize, seed: u64) -> Result<(AccuracySummary, Vec<Trace>)> {
    if rollouts == 0 {
        return Err(Error::Config("need at least one rollout".into()));
    }
    let batch = crate::baseline::open_loop_rollouts(&setup.model, setup.horizon(), rollouts, domain_seed(seed, "motivating", 0))?;
    let hmm = setup.raw_decoder()?;
    let q = &setup.model.quantizer;
    let mut acc = Vec::with_capacity(rollouts);
    let mut traces = Vec::with_capacity(rollouts);
    for r in &batch.rollouts {
        let zc: Vec<f64> = r.z_cell.iter().map(|&k| q.center(k)).collect();
        let yhat = viterbi(&hmm, &Observations::Values(zc.clone()))?.ys;
        acc.push(accuracy(&yhat, &r.y)?);
        traces.push(Trace { y: r.y.clone(), x: r.x.clone(), z: r.z.clone(), output: zc, yhat });
    }
    Ok((AccuracySummary::from_accuracies(&acc, setup.horizon() + 1), traces))
}

/// Closed-loop evaluation of a policy against the configured adversary.
pub fn evaluate_policy(
    setup: &Setup,
    policy: &PolicyParams,
    rollouts: usize,
    seed: u64,
) -> Result<(PolicyEval, Vec<Trace>)> {
    if rollouts == 0 {
        return Err(Error::Config("need at least one rollout".into()));
    }
    let hmm = setup.policy_decoder(policy, seed)?;
    let batch = rollout(&setup.model, policy, setup.horizon(), domain_seed(seed, "evaluate", 0), rollouts)?;
    let mut dist = Vec::with_capacity(rollouts);
    let mut acc = Vec::with_capacity(rollouts);
    let mut traces = Vec::with_capacity(rollouts);
    for r in &batch.rollouts {
        dist.push(r.x.iter().zip(&r.xhat).map(|(&x, &c)| setup.distortion.eval(x, c)).sum());
        let yhat = viterbi(&hmm, &setup.policy_observations(&hmm, &r.xhat))?.ys;
        acc.push(accuracy(&yhat, &r.y)?);
        let output = r.xhat.iter().map(|&c| setup.distortion.center(c)).collect();
        traces.push(Trace { y: r.y.clone(), x: r.x.clone(), z: r.z.clone(), output, yhat });
    }
    let (distortion, distortion_se) = mean_se(&dist);
    Ok((
        PolicyEval { distortion, distortion_se, accuracy: AccuracySummary::from_accuracies(&acc, setup.horizon() + 1) },
        traces,
    ))
}

/// The additive-noise baseline over the configured noise grid.
pub fn baseline(setup: &Setup, sigmas: &[f64], rollouts: usize, seed: u64) -> Result<(BaselineSweep, Vec<BaselinePoint>)> {
    if sigmas.is_empty() {
        return Err(Error::Config("empty noise grid".into()));
    }
    let sweep = BaselineSweep::new(&setup.model, &setup.fs, setup.horizon(), rollouts, setup.cfg.sigma_adv(), seed)?;
    let pts = sigmas.iter().map(|&s| sweep.point(&setup.fs, s)).collect::<Result<_>>()?;
    Ok((sweep, pts))
}

pub fn baseline_traces(setup: &Setup, sweep: &BaselineSweep, sigma: f64, n: usize) -> Result<Vec<Trace>> {
    let traces = sweep.traces(&setup.fs, sigma)?;
    Ok(traces
        .into_iter()
        .zip(&sweep.batch.rollouts)
        .take(n)
        .map(|(t, r)| Trace { y: t.y, x: t.x, z: r.z.clone(), output: t.noisy, yhat: t.yhat })
        .collect())
}

/// Noise level on `[0, sigma_max]` whose adversary accuracy matches
/// `target`, by bisection on the (decreasing) accuracy curve.
pub fn match_sigma(
    setup: &Setup,
    sweep: &BaselineSweep,
    target: f64,
    sigma_max: f64,
    tol: f64,
) -> Result<BaselinePoint> {
    let mut lo = sweep.point(&setup.fs, 0.0)?;
    if lo.accuracy.accuracy_mean <= target + tol {
        return Ok(lo);
    }
    let mut hi = sweep.point(&setup.fs, sigma_max)?;
    if hi.accuracy.accuracy_mean >= target - tol {
        return Ok(hi);
    }
    for _ in 0..40 {
        let mid = sweep.point(&setup.fs, 0.5 * (lo.sigma + hi.sigma))?;
        if (mid.accuracy.accuracy_mean - target).abs() <= tol {
            return Ok(mid);
        }
        if mid.accuracy.accuracy_mean > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if (lo.accuracy.accuracy_mean - target).abs() <= (hi.accuracy.accuracy_mean - target).abs() { lo } else { hi };
    Ok(best)
}

/// One row of the unified comparison CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    /// `privacy` (param = lambda) or `additive` (param = sigma).
    pub method: String,
    pub param: f64,
    pub distortion: f64,
    pub accuracy: f64,
    pub distortion_se: f64,
    pub accuracy_se: f64,
    pub misdetections: f64,
}

impl TradeoffRow {
    fn privacy(lambda: f64, e: &PolicyEval) -> Self {
        Self {
            method: "privacy".into(),
            param: lambda,
            distortion: e.distortion,
            accuracy: e.accuracy.accuracy_mean,
            distortion_se: e.distortion_se,
            accuracy_se: e.accuracy.accuracy_se(),
            misdetections: e.accuracy.misdetections_mean,
        }
    }

    fn additive(p: &BaselinePoint) -> Self {
        Self {
            method: "additive".into(),
            param: p.sigma,
            distortion: p.distortion,
            accuracy: p.accuracy.accuracy_mean,
            distortion_se: p.distortion_se,
            accuracy_se: p.accuracy.accuracy_se(),
            misdetections: p.accuracy.misdetections_mean,
        }
    }
}

/// `method,param,distortion,accuracy`.
pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("method,param,distortion,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.method, r.param, r.distortion, r.accuracy);
    }
    out
}

/// Result of one trained policy in the sweep.
#[derive(Debug, Clone)]
pub struct TradeoffPolicy {
    pub lambda: f64,
    pub report: TrainReport,
    pub eval: PolicyEval,
    pub traces: Vec<Trace>,
}

#[derive(Debug, Clone)]
pub struct TradeoffResult {
    pub policies: Vec<TradeoffPolicy>,
    pub additive: Vec<BaselinePoint>,
    pub rows: Vec<TradeoffRow>,
    pub raw: AccuracySummary,
    pub raw_traces: Vec<Trace>,
    pub mmse_traces: Vec<Trace>,
}

/// Trains one policy per lambda (ascending, each warm-started from the
/// previous), sweeps the noise grid, and optionally adds an
/// accuracy-matched noise level per policy.
pub fn tradeoff(setup: &Setup, seed: u64, mut progress: impl FnMut(&str)) -> Result<TradeoffResult> {
    let t = &setup.cfg.tradeoff;
    let mut lambdas = t.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut policy = setup.starting_policy(seed)?;
    let mut critics = setup.initial_critics()?;
    let mut policies = Vec::new();
    for &lambda in &lambdas {
        let mut tc = setup.cfg.train_config();
        tc.lambda = lambda;
        tc.seed = domain_seed(seed, "train-lambda", lambda.to_bits());
        let report = train(&setup.model, &setup.distortion, setup.horizon(), policy.clone(), critics.clone(), &tc)?;
        let (eval, traces) = evaluate_policy(setup, &report.policy, t.eval_rollouts, domain_seed(seed, "eval", 0))?;
        progress(&format!(
            "lambda {lambda}: {} iterations, distortion {:.4}, accuracy {:.4}",
            report.records.len(),
            eval.distortion,
            eval.accuracy.accuracy_mean
        ));
        policy = report.policy.clone();
        critics = report.critics.clone();
        policies.push(TradeoffPolicy { lambda, report, eval, traces: traces.into_iter().take(t.trace_rollouts).collect() });
    }
    let (sweep, mut additive) = baseline(setup, &t.sigmas, t.eval_rollouts, domain_seed(seed, "baseline", 0))?;
    if t.match_sigma {
        for p in &policies {
            let m = match_sigma(setup, &sweep, p.eval.accuracy.accuracy_mean, t.sigma_max, t.match_tol)?;
            progress(&format!("lambda {}: matched sigma {:.4}, accuracy {:.4}", p.lambda, m.sigma, m.accuracy.accuracy_mean));
            additive.push(m);
        }
    }
    additive.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    additive.dedup_by(|a, b| a.sigma == b.sigma);
    let mut rows: Vec<TradeoffRow> = policies.iter().map(|p| TradeoffRow::privacy(p.lambda, &p.eval)).collect();
    rows.extend(additive.iter().map(TradeoffRow::additive));
    let (raw, raw_traces) = motivating(setup, t.eval_rollouts, domain_seed(seed, "raw", 0))?;
    let mmse_traces = baseline_traces(setup, &sweep, 0.0, t.trace_rollouts)?;
    Ok(TradeoffResult {
        policies,
        additive,
        rows,
        raw,
        raw_traces: raw_traces.into_iter().take(t.trace_rollouts).collect(),
        mmse_traces,
    })
}

/// Nearest additive point by accuracy for each privacy point, within `tol`.
pub fn matched_pairs(rows: &[TradeoffRow], tol: f64) -> Vec<(TradeoffRow, TradeoffRow)> {
    let additive: Vec<&TradeoffRow> = rows.iter().filter(|r| r.method == "additive").collect();
    rows.iter()
        .filter(|r| r.method == "privacy")
        .filter_map(|p| {
            additive
                .iter()
                .min_by(|a, b| (a.accuracy - p.accuracy).abs().total_cmp(&(b.accuracy - p.accuracy).abs()))
                .filter(|a| (a.accuracy - p.accuracy).abs() <= tol)
                .map(|a| (p.clone(), (*a).clone()))
        })
        .collect()
}
