//! Policy-gradient training with the variational information-loss approximator.
//!
//! Each outer iteration samples a batch of closed-loop rollouts, refits the
//! critics on it, scores every step with `l_t = l_d + lambda (g_t - f_t)` and
//! takes one descent step along the score-function gradient.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::finite::{exact_objective, ExactObjective, FiniteSystem, HistoryVariant, JointDistribution};
use crate::infoloss::{
    fit_critics, info_loss_estimate, objective_f, objective_g, CriticConfig, CriticDataset, CriticKind,
    CriticParams, FitConfig,
};
use crate::loss::{Distortion, LossKind};
use crate::model::{rollout, Simulator, TrajectoryBatch};
use crate::policy::{EstimationPolicy, HistoryWindow, PolicyKind, PolicyParams};
use crate::rng::domain_seed;
use crate::{Error, Result};

/// How losses are credited to the score terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Credit {
    /// `(sum_t l_t) (sum_t score_t)`, as in the gradient theorem.
    #[default]
    Full,
    /// `sum_t score_t (sum_{s >= t} l_s)`: the same expectation with the
    /// zero-mean products of past losses and later scores removed.
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub inner_iters: usize,
    pub outer_iters: usize,
    /// Default for both tolerances.
    pub tol: f64,
    pub inner_tol: Option<f64>,
    pub outer_tol: Option<f64>,
    /// Iterations per half of the convergence window.
    pub window: usize,
    pub baseline: bool,
    pub variant: HistoryVariant,
    pub credit: Credit,
    pub momentum: f64,
    pub loss: LossKind,
    pub d: usize,
    pub policy: PolicyKind,
    pub hidden: usize,
    pub d_c: usize,
    pub critic: CriticKind,
    pub critic_hidden: usize,
    pub critic_time: bool,
    /// Maximum-likelihood steps fitting the initial policy to a reference
    /// estimator before policy-gradient training (0 disables).
    pub pretrain_iters: usize,
    pub pretrain_rollouts: usize,
    pub pretrain_step: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            k: 256,
            alpha: 1e-2,
            beta: 1e-2,
            gamma: 1e-3,
            inner_iters: 200,
            outer_iters: 2000,
            tol: 1e-4,
            inner_tol: None,
            outer_tol: None,
            window: 10,
            baseline: true,
            variant: HistoryVariant::Past,
            credit: Credit::Full,
            momentum: 0.0,
            loss: LossKind::Squared,
            d: 2,
            policy: PolicyKind::Mlp,
            hidden: 64,
            d_c: 2,
            critic: CriticKind::Mlp,
            critic_hidden: 64,
            critic_time: true,
            pretrain_iters: 0,
            pretrain_rollouts: 256,
            pretrain_step: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("train.{name} must be finite and > 0, got {v}")))
            }
        };
        pos("alpha", self.alpha)?;
        pos("beta", self.beta)?;
        pos("gamma", self.gamma)?;
        pos("pretrain_step", self.pretrain_step)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("train.lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::Config("train.K must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.window == 0 {
            return Err(Error::Config("train.window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn inner_tol(&self) -> f64 {
        self.inner_tol.unwrap_or(self.tol)
    }

    pub fn outer_tol(&self) -> f64 {
        self.outer_tol.unwrap_or(self.tol)
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig { kind: self.critic, d_c: self.d_c, hidden: self.critic_hidden, time_input: self.critic_time }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { alpha: self.alpha, beta: self.beta, max_iters: self.inner_iters, tol: self.inner_tol() }
    }

    /// Initial policy of the configured kind.
    pub fn initial_policy(&self, n_z: usize, m: usize) -> Result<PolicyParams> {
        match self.policy {
            PolicyKind::Tabular => PolicyParams::tabular(self.d, n_z, m),
            PolicyKind::Mlp => PolicyParams::mlp(self.d, n_z, m, self.hidden, domain_seed(self.seed, "policy-init", 0)),
        }
    }

    pub fn initial_critics(&self, m: usize, ny: usize, horizon: usize) -> Result<CriticParams> {
        CriticParams::new(&self.critic_config(), m, ny, horizon, self.variant, domain_seed(self.seed, "critic-init", 0))
    }
}

/// Fits `policy` by gradient ascent on the mean log-likelihood of `targets`
/// along the measurement histories `z_cells`; the targets also fill the
/// output part of the window. Returns the final mean log-likelihood.
pub fn imitate(
    policy: &mut PolicyParams,
    z_cells: &[Vec<usize>],
    targets: &[Vec<usize>],
    step: f64,
    iters: usize,
) -> Result<f64> {
    if z_cells.len() != targets.len() {
        return Err(Error::LengthMismatch { left: z_cells.len(), right: targets.len() });
    }
    let (d, n_z, m) = (policy.depth(), policy.n_z(), policy.n_out());
    let mut counts: BTreeMap<HistoryWindow, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;
    for (zs, xs) in z_cells.iter().zip(targets) {
        if zs.len() != xs.len() {
            return Err(Error::LengthMismatch { left: zs.len(), right: xs.len() });
        }
        for t in 0..zs.len() {
            if xs[t] >= m {
                return Err(Error::Config(format!("target cell {} out of range", xs[t])));
            }
            let h = HistoryWindow::from_history(d, n_z, m, &zs[..=t], &xs[..t]);
            counts.entry(h).or_insert_with(|| vec![0.0; m])[xs[t]] += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return Err(Error::Config("no imitation targets".into()));
    }
    let loglik = |p: &PolicyParams| -> Result<f64> {
        let mut ll = 0.0;
        for (h, c) in &counts {
            let probs = p.dist(h)?;
            ll += c.iter().zip(&probs).filter(|(c, _)| **c > 0.0).map(|(c, q)| c * q.ln()).sum::<f64>();
        }
        Ok(ll / total)
    };
    let mut grad = vec![0.0; policy.params.len()];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (h, c) in &counts {
            for (i, &ci) in c.iter().enumerate() {
                if ci > 0.0 {
                    policy.add_score(h, i, ci / total, &mut grad)?;
                }
            }
        }
        policy.params.iter_mut().zip(&grad).for_each(|(p, g)| *p += step * g);
    }
    loglik(policy)
}

/// Per-step losses of a batch, `[rollout][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLosses {
    pub distortion: Vec<Vec<f64>>,
    /// Information-loss estimates `g_t - f_t` (not scaled by lambda).
    pub info: Vec<Vec<f64>>,
    /// `l_t = l_d + lambda * info`.
    pub total: Vec<Vec<f64>>,
}

impl StageLosses {
    pub fn mean_distortion(&self) -> f64 {
        mean_of_sums(&self.distortion)
    }

    pub fn mean_info(&self) -> f64 {
        mean_of_sums(&self.info)
    }

    pub fn mean_total(&self) -> f64 {
        mean_of_sums(&self.total)
    }
}

fn mean_of_sums(rows: &[Vec<f64>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / rows.len() as f64
}

/// `l_t = l_d(x_t, center(x̂_t)) + lambda * (g_t - f_t)` for every rollout and step.
pub fn stage_loss(
    batch: &TrajectoryBatch,
    critics: &CriticParams,
    lambda: f64,
    distortion: &Distortion,
) -> Result<StageLosses> {
    let mut out = StageLosses { distortion: vec![], info: vec![], total: vec![] };
    for r in &batch.rollouts {
        let mut d = Vec::with_capacity(r.xhat.len());
        let mut i = Vec::with_capacity(r.xhat.len());
        for t in 0..r.xhat.len() {
            d.push(distortion.eval(r.x[t], r.xhat[t]));
            i.push(info_loss_estimate(critics, t, r.xhat[t], &r.xhat[..t], &r.y)?);
        }
        out.total.push(d.iter().zip(&i).map(|(a, b)| a + lambda * b).collect());
        out.distortion.push(d);
        out.info.push(i);
    }
    Ok(out)
}

/// Score-function gradient estimate of the objective from one batch.
///
/// With `baseline`, each rollout's return is centred by the mean return of
/// the other rollouts in the batch (per step for causal credit), which keeps
/// the estimate unbiased.
pub fn policy_gradient(
    batch: &TrajectoryBatch,
    losses: &[Vec<f64>],
    policy: &PolicyParams,
    baseline: bool,
    credit: Credit,
) -> Result<Vec<f64>> {
    if losses.len() != batch.len() {
        return Err(Error::LengthMismatch { left: losses.len(), right: batch.len() });
    }
    let k = batch.len();
    let mut grad = vec![0.0; policy.params.len()];
    if k == 0 {
        return Ok(grad);
    }
    let steps = batch.horizon + 1;
    // returns[k][t]: the loss credited to the score at t.
    let returns: Vec<Vec<f64>> = losses
        .iter()
        .map(|l| {
            if l.len() != steps {
                return Err(Error::LengthMismatch { left: l.len(), right: steps });
            }
            Ok(match credit {
                Credit::Full => vec![l.iter().sum(); steps],
                Credit::Causal => {
                    let mut acc = 0.0;
                    let mut g: Vec<f64> = l.iter().rev().map(|v| {
                        acc += v;
                        acc
                    }).collect();
                    g.reverse();
                    g
                }
            })
        })
        .collect::<Result<_>>()?;
    let sums: Vec<f64> = (0..steps).map(|t| returns.iter().map(|g| g[t]).sum()).collect();
    for (r, g) in batch.rollouts.iter().zip(&returns) {
        for t in 0..steps {
            let b = if baseline && k > 1 { (sums[t] - g[t]) / (k - 1) as f64 } else { 0.0 };
            let w = (g[t] - b) / k as f64;
            if w != 0.0 {
                policy.add_score_for(&r.z_cell[..=t], &r.xhat[..t], r.xhat[t], w, &mut grad)?;
            }
        }
    }
    Ok(grad)
}

/// `E[(sum_t l_t)(sum_t score_t)]` by explicit enumeration of every
/// `(y, x, z̃, x̂)` path, with `l_t = l_d + lambda * info_t` and the exact
/// per-step information loss. Returns the expected `sum_t l_t` as well.
pub fn expected_policy_gradient<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
    variant: HistoryVariant,
) -> Result<(f64, Vec<f64>)> {
    let joint = crate::finite::exact_joint(fs, policy, horizon)?;
    let info = InfoTable::new(&joint, variant);
    let mut grad = vec![0.0; policy.n_params()];
    let mut expected = 0.0;
    let mut stack = PathStack::default();
    for y in 0..fs.ny {
        for x in 0..fs.nx {
            let p = fs.mu_y0[y] * fs.mu_x0[x];
            if p > 0.0 {
                stack.ys.push(y);
                stack.xs.push(x);
                walk_paths(fs, policy, horizon, table, lambda, &info, p, &mut stack, &mut grad, &mut expected)?;
                stack.ys.pop();
                stack.xs.pop();
            }
        }
    }
    Ok((expected, grad))
}

#[derive(Default)]
struct PathStack {
    ys: Vec<usize>,
    xs: Vec<usize>,
    zs: Vec<usize>,
    xhs: Vec<usize>,
}

/// Prefix marginals for `log P(x̂_t | x̂^{t-1}, y-cut) - log P(x̂_t | x̂^{t-1})`.
struct InfoTable {
    joint: JointDistribution,
    variant: HistoryVariant,
    /// `[a_steps][b_steps]` prefix marginals.
    marg: Vec<Vec<Vec<f64>>>,
}

impl InfoTable {
    fn new(joint: &JointDistribution, variant: HistoryVariant) -> Self {
        let steps = joint.horizon + 1;
        let marg = (0..=steps).map(|a| (0..=steps).map(|b| joint.prefix_marginal(a, b)).collect()).collect();
        Self { joint: joint.clone(), variant, marg }
    }

    fn idx(&self, a: &[usize], b: &[usize]) -> usize {
        let ia = a.iter().fold(0, |acc, &v| acc * self.joint.n_a + v);
        let ib = b.iter().fold(0, |acc, &v| acc * self.joint.n_b + v);
        ia * self.joint.n_b.pow(b.len() as u32) + ib
    }

    fn loss(&self, t: usize, ys: &[usize], xhs: &[usize]) -> f64 {
        let a = match self.variant {
            HistoryVariant::Past => &ys[..t],
            HistoryVariant::Present => &ys[..=t],
        };
        let m = &self.marg;
        let num = m[a.len()][t + 1][self.idx(a, &xhs[..=t])] / m[a.len()][t][self.idx(a, &xhs[..t])];
        let den = m[0][t + 1][self.idx(&[], &xhs[..=t])] / m[0][t][self.idx(&[], &xhs[..t])];
        (num / den).ln()
    }
}

#[allow(clippy::too_many_arguments)]
fn walk_paths<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
    info: &InfoTable,
    p: f64,
    s: &mut PathStack,
    grad: &mut [f64],
    expected: &mut f64,
) -> Result<()> {
    let t = s.ys.len() - 1;
    let x = s.xs[t];
    for z in 0..fs.nz {
        let pz = fs.pz[x][z];
        if pz <= 0.0 {
            continue;
        }
        s.zs.push(z);
        let probs = policy.probs_for(&s.zs, &s.xhs)?;
        for (xh, &w) in probs.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            s.xhs.push(xh);
            let q = p * pz * w;
            if t == horizon {
                let cost: f64 = (0..=horizon)
                    .map(|u| table[s.xs[u]][s.xhs[u]] + lambda * info.loss(u, &s.ys, &s.xhs))
                    .sum();
                *expected += q * cost;
                for u in 0..=horizon {
                    policy.add_score_for(&s.zs[..=u], &s.xhs[..u], s.xhs[u], q * cost, grad)?;
                }
            } else {
                let y = s.ys[t];
                for y2 in 0..fs.ny {
                    for x2 in 0..fs.nx {
                        let r = fs.py[y][y2] * fs.px[x][x2][y];
                        if r <= 0.0 {
                            continue;
                        }
                        s.ys.push(y2);
                        s.xs.push(x2);
                        walk_paths(fs, policy, horizon, table, lambda, info, q * r, s, grad, expected)?;
                        s.ys.pop();
                        s.xs.pop();
                    }
                }
            }
            s.xhs.pop();
        }
        s.zs.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub distortion: f64,
    pub mi_estimate: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    pub converged: bool,
    pub diverged: bool,
    pub policy: PolicyParams,
    pub critics: CriticParams,
}

impl TrainReport {
    /// `iter,distortion,mi_estimate,objective`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,distortion,mi_estimate,objective\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.iter, r.distortion, r.mi_estimate, r.objective);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let critics: serde_json::Value = serde_json::from_str(&self.critics.to_json()).expect("valid json");
        let doc = serde_json::json!({
            "iterations": self.records,
            "converged": self.converged,
            "diverged": self.diverged,
            "policy": self.policy.to_checkpoint(),
            "critics": critics,
        });
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// Runs the training loop from `policy` and `critics`.
///
/// Stops after `outer_iters`, when the mean objective of the last `window`
/// iterations is within `outer_tol` (relative) of the `window` before, or when
/// the objective exceeds ten times its initial value.
pub fn train<S: Simulator>(
    sim: &S,
    distortion: &Distortion,
    horizon: usize,
    mut policy: PolicyParams,
    mut critics: CriticParams,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if critics.g.shape.m != policy.n_out() || distortion.n_out() != policy.n_out() {
        return Err(Error::Config("policy, critics and distortion disagree on M".into()));
    }
    let fit = cfg.fit_config();
    let mut velocity = vec![0.0; policy.params.len()];
    let mut records = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    for iter in 0..cfg.outer_iters {
        let batch = rollout(sim, &policy, horizon, domain_seed(cfg.seed, "train", iter as u64), cfg.k)?;
        let data = CriticDataset::from_batch(&batch, &critics);
        fit_critics(&mut critics, &data, &fit)?;
        let losses = stage_loss(&batch, &critics, cfg.lambda, distortion)?;
        let rec = IterRecord {
            iter,
            distortion: losses.mean_distortion(),
            mi_estimate: losses.mean_info(),
            objective: losses.mean_total(),
        };
        log::debug!("iter {iter}: distortion {:.5} mi {:.5} objective {:.5}", rec.distortion, rec.mi_estimate, rec.objective);
        records.push(rec);
        let initial = records[0].objective;
        if !rec.objective.is_finite() || rec.objective > 10.0 * initial.abs().max(1e-12) {
            log::warn!("training diverged at iteration {iter}: objective {}", rec.objective);
            diverged = true;
            break;
        }
        let w = cfg.window;
        if records.len() >= 2 * w {
            let n = records.len();
            let last: f64 = records[n - w..].iter().map(|r| r.objective).sum::<f64>() / w as f64;
            let prev: f64 = records[n - 2 * w..n - w].iter().map(|r| r.objective).sum::<f64>() / w as f64;
            if (last - prev).abs() < cfg.outer_tol() * prev.abs() {
                converged = true;
                break;
            }
        }
        let grad = policy_gradient(&batch, &losses.total, &policy, cfg.baseline, cfg.credit)?;
        for ((p, v), g) in policy.params.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.gamma * *v;
        }
    }
    Ok(TrainReport { records, converged, diverged, policy, critics })
}

/// Exact distortion, mutual information and objective on a finite system.
pub fn evaluate_exact<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
) -> Result<ExactObjective> {
    exact_objective(fs, policy, horizon, table, lambda)
}

/// Monte-Carlo evaluation with critics fitted on the evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEval {
    pub distortion: f64,
    pub distortion_se: f64,
    /// Fitted lower bounds on the two KL sums; `mi = f1 - f2`.
    pub f1: f64,
    pub f2: f64,
    pub mi: f64,
    pub objective: f64,
}

pub fn evaluate_empirical<S: Simulator>(
    sim: &S,
    policy: &PolicyParams,
    distortion: &Distortion,
    horizon: usize,
    rollouts: usize,
    mut critics: CriticParams,
    fit: &FitConfig,
    lambda: f64,
    seed: u64,
) -> Result<EmpiricalEval> {
    if rollouts == 0 {
        return Err(Error::Config("evaluation needs at least one rollout".into()));
    }
    let batch = rollout(sim, policy, horizon, domain_seed(seed, "evaluate", 0), rollouts)?;
    let data = CriticDataset::from_batch(&batch, &critics);
    fit_critics(&mut critics, &data, fit)?;
    let f1 = objective_g(&critics, &data)?.0;
    let f2 = objective_f(&critics, &data)?.0;
    let per: Vec<f64> = batch
        .rollouts
        .iter()
        .map(|r| (0..r.xhat.len()).map(|t| distortion.eval(r.x[t], r.xhat[t])).sum())
        .collect();
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let var = if per.len() > 1 { per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(EmpiricalEval {
        distortion: mean,
        distortion_se: (var / n).sqrt(),
        f1,
        f2,
        mi: f1 - f2,
        objective: mean + lambda * (f1 - f2),
    })
}
