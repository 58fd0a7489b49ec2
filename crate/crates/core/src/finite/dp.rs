use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::belief::{belief_init, belief_update, collection_for, stage_cost, BeliefState};
use super::joint::{check_size, check_table};
use super::objective::{exact_objective, exact_objective_grad};
use super::FiniteSystem;
use crate::numeric::softmax;
use crate::policy::EstimationPolicy;
use crate::rng::stream;
use crate::{Error, Result};

/// Longest horizon the DP oracle accepts.
pub const MAX_DP_HORIZON: usize = 3;
const MAX_TREE_PARAMS: usize = 2_000_000;

/// Slot layout of a nonstationary policy over full histories: one
/// distribution per `(t, x̂^{t-1}, z̃^t)`.
#[derive(Debug, Clone, Default, PartialEq)]
struct Layout {
    horizon: usize,
    nz: usize,
    m: usize,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(horizon: usize, nz: usize, m: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(horizon + 1);
        let mut len = 0usize;
        for t in 0..=horizon as u32 {
            offsets.push(len);
            let slots = m
                .checked_pow(t)
                .and_then(|v| v.checked_mul(nz.checked_pow(t + 1)?))
                .and_then(|v| v.checked_mul(m))
                .filter(|&v| v <= MAX_TREE_PARAMS)
                .ok_or_else(|| Error::Config("policy tree is too large".into()))?;
            len += slots;
        }
        if len > MAX_TREE_PARAMS {
            return Err(Error::Config("policy tree is too large".into()));
        }
        Ok(Self { horizon, nz, m, offsets, len })
    }

    fn slot(&self, zs: &[usize], xs: &[usize]) -> Result<usize> {
        let t = xs.len();
        if zs.len() != t + 1 || t > self.horizon {
            return Err(Error::Config(format!(
                "policy tree expects z̃^t of length t+1 <= {}, got {} and {}",
                self.horizon + 1,
                zs.len(),
                xs.len()
            )));
        }
        if zs.iter().any(|&z| z >= self.nz) || xs.iter().any(|&x| x >= self.m) {
            return Err(Error::Config("history symbol out of range for the policy tree".into()));
        }
        let ix = xs.iter().fold(0, |acc, &v| acc * self.m + v);
        let iz = zs.iter().fold(0, |acc, &v| acc * self.nz + v);
        Ok(self.offsets[t] + (ix * self.nz.pow(t as u32 + 1) + iz) * self.m)
    }
}

/// Softmax-parameterized nonstationary policy over full histories.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTree {
    layout: Layout,
    pub logits: Vec<f64>,
}

impl SoftmaxTree {
    pub fn zeros(horizon: usize, nz: usize, m: usize) -> Result<Self> {
        let layout = Layout::new(horizon, nz, m)?;
        let logits = vec![0.0; layout.len];
        Ok(Self { layout, logits })
    }

    pub fn to_tree(&self) -> PolicyTree {
        let mut probs = self.logits.clone();
        for chunk in probs.chunks_mut(self.layout.m) {
            let p = softmax(chunk);
            chunk.copy_from_slice(&p);
        }
        PolicyTree { layout: self.layout.clone(), probs }
    }
}

impl EstimationPolicy for SoftmaxTree {
    fn n_out(&self) -> usize {
        self.layout.m
    }

    fn n_params(&self) -> usize {
        self.logits.len()
    }

    fn probs_for(&self, z_hist: &[usize], xhat_hist: &[usize]) -> Result<Vec<f64>> {
        let s = self.layout.slot(z_hist, xhat_hist)?;
        Ok(softmax(&self.logits[s..s + self.layout.m]))
    }

    fn add_score_for(
        &self,
        z_hist: &[usize],
        xhat_hist: &[usize],
        xhat: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let s = self.layout.slot(z_hist, xhat_hist)?;
        let p = softmax(&self.logits[s..s + self.layout.m]);
        for (i, pi) in p.iter().enumerate() {
            let ind = if i == xhat { 1.0 } else { 0.0 };
            grad[s + i] += weight * (ind - pi);
        }
        Ok(())
    }
}

/// Nonstationary policy over full histories stored as probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTree {
    layout: Layout,
    probs: Vec<f64>,
}

impl PolicyTree {
    pub fn uniform(horizon: usize, nz: usize, m: usize) -> Result<Self> {
        let layout = Layout::new(horizon, nz, m)?;
        let probs = vec![1.0 / m as f64; layout.len];
        Ok(Self { layout, probs })
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    pub fn set(&mut self, z_hist: &[usize], xhat_hist: &[usize], dist: &[f64]) -> Result<()> {
        if dist.len() != self.layout.m {
            return Err(Error::LengthMismatch { left: dist.len(), right: self.layout.m });
        }
        let s = self.layout.slot(z_hist, xhat_hist)?;
        self.probs[s..s + self.layout.m].copy_from_slice(dist);
        Ok(())
    }

    /// Rebuilds a tree from reached nodes; unreached slots stay uniform.
    pub fn from_nodes(horizon: usize, nz: usize, m: usize, nodes: &[PolicyNode]) -> Result<Self> {
        let mut tree = Self::uniform(horizon, nz, m)?;
        for node in nodes {
            for d in &node.decisions {
                tree.set(&d.zs, &node.xhat_prefix, &d.probs)?;
            }
        }
        Ok(tree)
    }

    /// Snaps every rule whose largest probability is within `tol` of 1 to a point mass.
    fn snapped(&self, tol: f64) -> Self {
        let mut out = self.clone();
        for chunk in out.probs.chunks_mut(self.layout.m) {
            let (imax, &pmax) = chunk
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            if pmax >= 1.0 - tol {
                chunk.iter_mut().enumerate().for_each(|(i, p)| *p = if i == imax { 1.0 } else { 0.0 });
            }
        }
        out
    }
}

impl EstimationPolicy for PolicyTree {
    fn n_out(&self) -> usize {
        self.layout.m
    }

    fn n_params(&self) -> usize {
        0
    }

    fn probs_for(&self, z_hist: &[usize], xhat_hist: &[usize]) -> Result<Vec<f64>> {
        let s = self.layout.slot(z_hist, xhat_hist)?;
        Ok(self.probs[s..s + self.layout.m].to_vec())
    }

    fn add_score_for(&self, _: &[usize], _: &[usize], _: usize, _: f64, _: &mut [f64]) -> Result<()> {
        Err(Error::Config("a probability tree has no score; use SoftmaxTree".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBelief {
    pub ys: Vec<usize>,
    pub zs: Vec<usize>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecision {
    pub zs: Vec<usize>,
    pub probs: Vec<f64>,
}

/// One reached `(t, x̂^{t-1})`: the belief there and the rules applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNode {
    pub t: usize,
    pub xhat_prefix: Vec<usize>,
    /// `P(x̂^{t-1})`.
    pub prob: f64,
    pub belief: Vec<NodeBelief>,
    pub decisions: Vec<NodeDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub starts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Rules within this distance of a vertex are also tried as point masses.
    pub snap_tol: f64,
    pub seed: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { starts: 8, max_iters: 4000, grad_tol: 1e-7, snap_tol: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpResult {
    pub value: f64,
    pub distortion: f64,
    pub mi: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub policy_tree: Vec<PolicyNode>,
    #[serde(skip)]
    pub policy: PolicyTree,
}

fn reached_nodes(fs: &FiniteSystem, tree: &PolicyTree) -> Result<Vec<PolicyNode>> {
    fn walk(
        fs: &FiniteSystem,
        tree: &PolicyTree,
        prefix: &mut Vec<usize>,
        prob: f64,
        b: BeliefState,
        out: &mut Vec<PolicyNode>,
    ) -> Result<()> {
        let pol = collection_for(tree, prefix, &b)?;
        out.push(PolicyNode {
            t: b.t,
            xhat_prefix: prefix.clone(),
            prob,
            belief: b
                .entries
                .iter()
                .map(|(k, e)| NodeBelief { ys: k.ys.clone(), zs: k.zs.clone(), mass: e.mass })
                .collect(),
            decisions: pol.dists.iter().map(|(zs, p)| NodeDecision { zs: zs.clone(), probs: p.clone() }).collect(),
        });
        if b.t == tree.horizon() {
            return Ok(());
        }
        for xh in 0..tree.n_out() {
            let p: f64 = b.entries.iter().map(|(k, e)| e.mass * pol.dists[&k.zs][xh]).sum();
            if p <= 0.0 {
                continue;
            }
            let next = belief_update(&b, &pol, xh, fs)?;
            prefix.push(xh);
            walk(fs, tree, prefix, prob * p, next, out)?;
            prefix.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(fs, tree, &mut Vec::new(), 1.0, belief_init(fs), &mut out)?;
    Ok(out)
}

/// Value of `policy` through the Bellman recursion: stage cost under the
/// belief plus the expected continuation over emitted cells.
pub fn bellman_value<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    fn value<P: EstimationPolicy + ?Sized>(
        fs: &FiniteSystem,
        policy: &P,
        horizon: usize,
        table: &[Vec<f64>],
        lambda: f64,
        prefix: &mut Vec<usize>,
        b: &BeliefState,
    ) -> Result<f64> {
        let pol = collection_for(policy, prefix, b)?;
        let mut v = stage_cost(b, &pol, lambda, table)?;
        if b.t == horizon {
            return Ok(v);
        }
        for xh in 0..policy.n_out() {
            let p: f64 = b.entries.iter().map(|(k, e)| e.mass * pol.dists[&k.zs][xh]).sum();
            if p <= 0.0 {
                continue;
            }
            let next = belief_update(b, &pol, xh, fs)?;
            prefix.push(xh);
            v += p * value(fs, policy, horizon, table, lambda, prefix, &next)?;
            prefix.pop();
        }
        Ok(v)
    }
    check_size(fs, policy.n_out(), horizon)?;
    check_table(fs, policy.n_out(), table)?;
    value(fs, policy, horizon, table, lambda, &mut Vec::new(), &belief_init(fs))
}

/// Distortion-optimal deterministic rules: point mass on the cell minimizing
/// `E[l_d(X_t, .) | z̃^t]`, the same for every output prefix.
fn distortion_optimal(fs: &FiniteSystem, horizon: usize, table: &[Vec<f64>], m: usize) -> Result<PolicyTree> {
    let mut tree = PolicyTree::uniform(horizon, fs.nz, m)?;
    // alpha[y * nx + x] = P(y_t, x_t, z̃^{t-1}).
    let mut alpha = vec![0.0; fs.ny * fs.nx];
    for y in 0..fs.ny {
        for x in 0..fs.nx {
            alpha[y * fs.nx + x] = fs.mu_y0[y] * fs.mu_x0[x];
        }
    }
    let mut zs = Vec::new();
    greedy(fs, table, m, &mut tree, &alpha, &mut zs)?;
    Ok(tree)
}

fn greedy(
    fs: &FiniteSystem,
    table: &[Vec<f64>],
    m: usize,
    tree: &mut PolicyTree,
    alpha: &[f64],
    zs: &mut Vec<usize>,
) -> Result<()> {
    let (ny, nx) = (fs.ny, fs.nx);
    for z in 0..fs.nz {
        let az: Vec<f64> = alpha.iter().enumerate().map(|(i, &a)| a * fs.pz[i % nx][z]).collect();
        if az.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        zs.push(z);
        let mut best = (0, f64::INFINITY);
        for i in 0..m {
            let c: f64 = az.iter().enumerate().map(|(k, a)| a * table[k % nx][i]).sum();
            if c < best.1 {
                best = (i, c);
            }
        }
        let mut dist = vec![0.0; m];
        dist[best.0] = 1.0;
        let t = zs.len() - 1;
        let mut xs = vec![0usize; t];
        for ix in 0..m.pow(t as u32) {
            let mut v = ix;
            for d in xs.iter_mut().rev() {
                *d = v % m;
                v /= m;
            }
            tree.set(zs, &xs, &dist)?;
        }
        if t < tree.horizon() {
            let mut next = vec![0.0; ny * nx];
            for y in 0..ny {
                let pred = fs.predict(&az[y * nx..(y + 1) * nx], y);
                for y2 in 0..ny {
                    for x2 in 0..nx {
                        next[y2 * nx + x2] += fs.py[y][y2] * pred[x2];
                    }
                }
            }
            greedy(fs, table, m, tree, &next, zs)?;
        }
        zs.pop();
    }
    Ok(())
}

struct Descent {
    logits: Vec<f64>,
    value: f64,
    grad_norm: f64,
}

fn descend(
    fs: &FiniteSystem,
    mut tree: SoftmaxTree,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
    cfg: &DpConfig,
) -> Result<Descent> {
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (obj, mut grad) = exact_objective_grad(fs, &tree, horizon, table, lambda)?;
    let mut value = obj.value;
    let mut step = 1.0;
    for _ in 0..cfg.max_iters {
        let g2: f64 = grad.iter().map(|v| v * v).sum();
        if g2.sqrt() < cfg.grad_tol {
            break;
        }
        let mut accepted = false;
        while step > 1e-14 {
            let mut trial = tree.clone();
            trial.logits.iter_mut().zip(&grad).for_each(|(l, g)| *l -= step * g);
            let (o, g) = exact_objective_grad(fs, &trial, horizon, table, lambda)?;
            if o.value <= value - 1e-4 * step * g2 {
                tree = trial;
                value = o.value;
                grad = g;
                step = (step * 2.0).min(1e8);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Descent { grad_norm: norm(&grad), logits: tree.logits, value })
}

/// Solves the finite-horizon problem exactly on `fs`.
///
/// With `lambda = 0` the optimum is the distortion-greedy deterministic
/// policy. Otherwise the rules at all reached beliefs are optimized jointly by
/// multi-start gradient descent on softmax logits with the exact gradient,
/// then rules close to a vertex are tried as point masses.
pub fn dp_solve(
    fs: &FiniteSystem,
    lambda: f64,
    horizon: usize,
    table: &[Vec<f64>],
    cfg: &DpConfig,
) -> Result<DpResult> {
    if horizon > MAX_DP_HORIZON {
        return Err(Error::Config(format!("dp-solve supports T <= {MAX_DP_HORIZON}, got {horizon}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let m = table.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(Error::Config("distortion table has no output cells".into()));
    }
    check_size(fs, m, horizon)?;
    check_table(fs, m, table)?;
    let greedy_tree = distortion_optimal(fs, horizon, table, m)?;
    let (policy, converged, grad_norm) = if lambda == 0.0 {
        (greedy_tree, true, 0.0)
    } else {
        let mut rng = stream(cfg.seed);
        let mut best: Option<(PolicyTree, f64, f64)> = None;
        for start in 0..cfg.starts.max(1) {
            let mut init = SoftmaxTree::zeros(horizon, fs.nz, m)?;
            match start {
                0 => {}
                1 => init.logits.iter_mut().zip(&greedy_tree.probs).for_each(|(l, p)| *l = 3.0 * p),
                _ => init.logits.iter_mut().for_each(|l| *l = 2.0 * rng.sample::<f64, _>(StandardNormal)),
            }
            let d = descend(fs, init, horizon, table, lambda, cfg)?;
            let soft = SoftmaxTree { layout: Layout::new(horizon, fs.nz, m)?, logits: d.logits }.to_tree();
            let snapped = soft.snapped(cfg.snap_tol);
            let sv = exact_objective(fs, &snapped, horizon, table, lambda)?.value;
            let (tree, v) = if sv <= d.value { (snapped, sv) } else { (soft, d.value) };
            log::debug!("dp start {start}: value {v:.10}, grad norm {:.3e}", d.grad_norm);
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((tree, v, d.grad_norm));
            }
        }
        let (tree, _, g) = best.expect("at least one start");
        (tree, g < cfg.grad_tol, g)
    };
    if !converged {
        log::warn!("dp-solve: gradient norm {grad_norm:.3e} above tolerance {:.1e}", cfg.grad_tol);
    }
    let obj = exact_objective(fs, &policy, horizon, table, lambda)?;
    Ok(DpResult {
        value: obj.value,
        distortion: obj.distortion,
        mi: obj.mi,
        lambda,
        horizon,
        converged,
        grad_norm,
        policy_tree: reached_nodes(fs, &policy)?,
        policy,
    })
}
