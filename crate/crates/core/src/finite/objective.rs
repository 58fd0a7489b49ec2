use serde::{Deserialize, Serialize};

use super::joint::{check_size, check_table, enumerate, exact_mi, JointDistribution};
use super::FiniteSystem;
use crate::policy::EstimationPolicy;
use crate::Result;

/// `sum_t E[l_d] + lambda * I(X̂^T; Y^T)` and its parts, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactObjective {
    pub distortion: f64,
    pub mi: f64,
    pub value: f64,
}

pub fn exact_objective<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
) -> Result<ExactObjective> {
    let e = enumerate(fs, policy, horizon, Some(table))?;
    let distortion = e.total_distortion();
    let mi = exact_mi(&e.joint_yx);
    Ok(ExactObjective { distortion, mi, value: distortion + lambda * mi })
}

struct GradWalk<'a, P: ?Sized> {
    fs: &'a FiniteSystem,
    policy: &'a P,
    horizon: usize,
    table: &'a [Vec<f64>],
    lambda: f64,
    /// `log P(y^T, x̂^T) / (P(y^T) P(x̂^T))` laid out like the joint.
    log_ratio: JointDistribution,
    ys: Vec<usize>,
    zs: Vec<usize>,
    xs: Vec<usize>,
    grad: Vec<f64>,
}

impl<P: EstimationPolicy + ?Sized> GradWalk<'_, P> {
    /// Returns the probability-weighted cost from stage `t` on below a node
    /// and adds `cost-to-go * score` for every decision in the subtree.
    fn visit(&mut self, alpha: &[f64]) -> Result<f64> {
        let fs = self.fs;
        let t = self.ys.len() - 1;
        let mut total = 0.0;
        for z in 0..fs.nz {
            let az: Vec<f64> = alpha.iter().enumerate().map(|(x, &a)| a * fs.pz[x][z]).collect();
            let mass: f64 = az.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            self.zs.push(z);
            let probs = self.policy.probs_for(&self.zs, &self.xs)?;
            for (xh, &w) in probs.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let mut child = w * az.iter().zip(self.table).map(|(a, r)| a * r[xh]).sum::<f64>();
                self.xs.push(xh);
                if t == self.horizon {
                    let i = self.log_ratio.index(&self.ys, &self.xs);
                    child += self.lambda * w * mass * self.log_ratio.probs[i];
                } else {
                    let y = self.ys[t];
                    let pred = self.fs.predict(&az, y);
                    for y_next in 0..fs.ny {
                        let py = fs.py[y][y_next] * w;
                        if py <= 0.0 {
                            continue;
                        }
                        let next: Vec<f64> = pred.iter().map(|p| p * py).collect();
                        self.ys.push(y_next);
                        child += self.visit(&next)?;
                        self.ys.pop();
                    }
                }
                self.xs.pop();
                self.policy.add_score_for(&self.zs, &self.xs, xh, child, &mut self.grad)?;
                total += child;
            }
            self.zs.pop();
        }
        Ok(total)
    }
}

/// Exact objective and its gradient in the policy parameters.
///
/// The gradient is `sum_t E[score_t * (cost from t on)]`; costs incurred
/// before a decision drop out because each score has zero mean given its past.
pub fn exact_objective_grad<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: &[Vec<f64>],
    lambda: f64,
) -> Result<(ExactObjective, Vec<f64>)> {
    let m = policy.n_out();
    check_size(fs, m, horizon)?;
    check_table(fs, m, table)?;
    let e = enumerate(fs, policy, horizon, Some(table))?;
    let joint = e.joint_yx;
    let steps = horizon + 1;
    let pa = joint.prefix_marginal(steps, 0);
    let pb = joint.prefix_marginal(0, steps);
    let b_len = pb.len();
    let mut log_ratio = joint.clone();
    for (i, v) in log_ratio.probs.iter_mut().enumerate() {
        *v = if *v > 0.0 { (*v / (pa[i / b_len] * pb[i % b_len])).ln() } else { 0.0 };
    }
    let mut walk = GradWalk {
        fs,
        policy,
        horizon,
        table,
        lambda,
        log_ratio,
        ys: Vec::with_capacity(steps),
        zs: Vec::with_capacity(steps),
        xs: Vec::with_capacity(steps),
        grad: vec![0.0; policy.n_params()],
    };
    let mut value = 0.0;
    for y0 in 0..fs.ny {
        if fs.mu_y0[y0] <= 0.0 {
            continue;
        }
        let alpha: Vec<f64> = fs.mu_x0.iter().map(|p| p * fs.mu_y0[y0]).collect();
        walk.ys.push(y0);
        value += walk.visit(&alpha)?;
        walk.ys.pop();
    }
    let distortion = e.distortion.iter().sum::<f64>();
    let mi = exact_mi(&joint);
    debug_assert!((value - (distortion + lambda * mi)).abs() < 1e-8 * (1.0 + value.abs()));
    Ok((ExactObjective { distortion, mi, value: distortion + lambda * mi }, walk.grad))
}
