use super::{FiniteSystem, HistoryVariant};
use crate::numeric::xlogy_ratio;
use crate::policy::EstimationPolicy;
use crate::{Error, Result};

/// Largest number of `(y, z̃, x̂)` paths the enumerators will walk.
pub const MAX_JOINT_PATHS: f64 = 1e7;

/// Joint law of two sequences `(a^T, b^T)` indexed with the first symbol most
/// significant: `probs[mixed(a) * n_b^(T+1) + mixed(b)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub n_a: usize,
    pub n_b: usize,
    pub horizon: usize,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn zeros(n_a: usize, n_b: usize, horizon: usize) -> Self {
        let len = n_a.pow(horizon as u32 + 1) * n_b.pow(horizon as u32 + 1);
        Self { n_a, n_b, horizon, probs: vec![0.0; len] }
    }

    fn b_len(&self) -> usize {
        self.n_b.pow(self.horizon as u32 + 1)
    }

    pub fn index(&self, a: &[usize], b: &[usize]) -> usize {
        let ia = a.iter().fold(0, |acc, &v| acc * self.n_a + v);
        let ib = b.iter().fold(0, |acc, &v| acc * self.n_b + v);
        ia * self.b_len() + ib
    }

    pub fn prob(&self, a: &[usize], b: &[usize]) -> f64 {
        self.probs[self.index(a, b)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Marginal of `(a_0..a_{a_steps-1}, b_0..b_{b_steps-1})`, laid out like
    /// the full table.
    pub fn prefix_marginal(&self, a_steps: usize, b_steps: usize) -> Vec<f64> {
        let steps = self.horizon + 1;
        assert!(a_steps <= steps && b_steps <= steps);
        let b_len = self.b_len();
        let a_div = self.n_a.pow((steps - a_steps) as u32);
        let b_div = self.n_b.pow((steps - b_steps) as u32);
        let b_out = self.n_b.pow(b_steps as u32);
        let mut out = vec![0.0; self.n_a.pow(a_steps as u32) * b_out];
        for (i, &p) in self.probs.iter().enumerate() {
            if p != 0.0 {
                let (ia, ib) = (i / b_len, i % b_len);
                out[(ia / a_div) * b_out + ib / b_div] += p;
            }
        }
        out
    }
}

/// Plug-in mutual information `I(A^T; B^T)` in nats.
pub fn exact_mi(joint: &JointDistribution) -> f64 {
    let steps = joint.horizon + 1;
    let pa = joint.prefix_marginal(steps, 0);
    let pb = joint.prefix_marginal(0, steps);
    let b_len = pb.len();
    joint
        .probs
        .iter()
        .enumerate()
        .map(|(i, &p)| xlogy_ratio(p, pa[i / b_len] * pb[i % b_len]))
        .sum()
}

/// Per-step terms of the chain expansion of `I(B^T; A^T)` with `A` the
/// private sequence and `B` the outputs.
///
/// `Past` returns `I(B_t; A^{t-1} | B^{t-1})` for `t = 1..=T`; `Present`
/// returns `I(B_t; A^t | B^{t-1})` for `t = 0..=T`.
pub fn mi_chain(joint: &JointDistribution, variant: HistoryVariant) -> Vec<f64> {
    let steps = joint.horizon + 1;
    let range = match variant {
        HistoryVariant::Past => 1..steps,
        HistoryVariant::Present => 0..steps,
    };
    range
        .map(|t| {
            let a_steps = match variant {
                HistoryVariant::Past => t,
                HistoryVariant::Present => t + 1,
            };
            conditional_mi_term(joint, a_steps, t)
        })
        .collect()
}

/// `I(B_t; A^{a_steps-1} | B^{t-1})`.
fn conditional_mi_term(joint: &JointDistribution, a_steps: usize, t: usize) -> f64 {
    let nb = joint.n_b;
    let full = joint.prefix_marginal(a_steps, t + 1);
    let prev = joint.prefix_marginal(a_steps, t);
    let out = joint.prefix_marginal(0, t + 1);
    let out_prev = joint.prefix_marginal(0, t);
    let b_now = nb.pow(t as u32 + 1);
    let b_prev = nb.pow(t as u32);
    let mut sum = 0.0;
    for (i, &p) in full.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let (ia, ib) = (i / b_now, i % b_now);
        let ib_prev = ib / nb;
        let q = prev[ia * b_prev + ib_prev] * out[ib] / out_prev[ib_prev];
        sum += xlogy_ratio(p, q);
    }
    sum
}

/// Everything a single exact walk over the closed loop produces.
#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Law of `(y^T, x̂^T)`.
    pub joint_yx: JointDistribution,
    /// Law of `(y^T, z̃^T)`.
    pub joint_yz: JointDistribution,
    /// `E[l_d(X_t, X̂_t)]` for `t = 0..=T`; zeros when no table was given.
    pub distortion: Vec<f64>,
}

impl Enumeration {
    pub fn total_distortion(&self) -> f64 {
        self.distortion.iter().sum()
    }
}

pub(crate) fn check_size(fs: &FiniteSystem, m: usize, horizon: usize) -> Result<()> {
    let per_step = (fs.ny * fs.nz * m) as f64;
    let paths = per_step.powi(horizon as i32 + 1);
    if paths > MAX_JOINT_PATHS {
        return Err(Error::TooLarge { paths, limit: MAX_JOINT_PATHS });
    }
    Ok(())
}

pub(crate) fn check_table(fs: &FiniteSystem, m: usize, table: &[Vec<f64>]) -> Result<()> {
    if table.len() != fs.nx || table.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!(
            "distortion table must be {} x {m}",
            fs.nx
        )));
    }
    Ok(())
}

struct Walk<'a, P: ?Sized> {
    fs: &'a FiniteSystem,
    policy: &'a P,
    horizon: usize,
    table: Option<&'a [Vec<f64>]>,
    ys: Vec<usize>,
    zs: Vec<usize>,
    xs: Vec<usize>,
    out: Enumeration,
}

impl<P: EstimationPolicy + ?Sized> Walk<'_, P> {
    /// `alpha[x] = P(y^t, z̃^{t-1}, x̂^{t-1}, x_t = x)`.
    fn visit(&mut self, alpha: &[f64]) -> Result<()> {
        let fs = self.fs;
        let t = self.ys.len() - 1;
        let m = self.policy.n_out();
        for z in 0..fs.nz {
            let az: Vec<f64> = alpha.iter().enumerate().map(|(x, &a)| a * fs.pz[x][z]).collect();
            let mass: f64 = az.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            self.zs.push(z);
            let probs = self.policy.probs_for(&self.zs, &self.xs)?;
            if t == self.horizon {
                let i = self.out.joint_yz.index(&self.ys, &self.zs);
                self.out.joint_yz.probs[i] += mass;
            }
            for (xh, &w) in probs.iter().enumerate().take(m) {
                if w <= 0.0 {
                    continue;
                }
                if let Some(table) = self.table {
                    self.out.distortion[t] += w * az.iter().zip(table).map(|(a, row)| a * row[xh]).sum::<f64>();
                }
                self.xs.push(xh);
                if t == self.horizon {
                    let i = self.out.joint_yx.index(&self.ys, &self.xs);
                    self.out.joint_yx.probs[i] += w * mass;
                } else {
                    let y = self.ys[t];
                    let pred = fs.predict(&az, y);
                    for y_next in 0..fs.ny {
                        let py = fs.py[y][y_next] * w;
                        if py <= 0.0 {
                            continue;
                        }
                        let next: Vec<f64> = pred.iter().map(|p| p * py).collect();
                        self.ys.push(y_next);
                        self.visit(&next)?;
                        self.ys.pop();
                    }
                }
                self.xs.pop();
            }
            self.zs.pop();
        }
        Ok(())
    }
}

/// Walks every `(y, z̃, x̂)` path of the closed loop of `policy` on `fs`,
/// summing the state grid out analytically.
pub fn enumerate<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
    table: Option<&[Vec<f64>]>,
) -> Result<Enumeration> {
    let m = policy.n_out();
    check_size(fs, m, horizon)?;
    if let Some(table) = table {
        check_table(fs, m, table)?;
    }
    let mut walk = Walk {
        fs,
        policy,
        horizon,
        table,
        ys: Vec::with_capacity(horizon + 1),
        zs: Vec::with_capacity(horizon + 1),
        xs: Vec::with_capacity(horizon + 1),
        out: Enumeration {
            joint_yx: JointDistribution::zeros(fs.ny, m, horizon),
            joint_yz: JointDistribution::zeros(fs.ny, fs.nz, horizon),
            distortion: vec![0.0; horizon + 1],
        },
    };
    for y0 in 0..fs.ny {
        if fs.mu_y0[y0] <= 0.0 {
            continue;
        }
        let alpha: Vec<f64> = fs.mu_x0.iter().map(|p| p * fs.mu_y0[y0]).collect();
        walk.ys.push(y0);
        walk.visit(&alpha)?;
        walk.ys.pop();
    }
    Ok(walk.out)
}

/// Law of `(y^T, x̂^T)` under the closed loop.
pub fn exact_joint<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    horizon: usize,
) -> Result<JointDistribution> {
    Ok(enumerate(fs, policy, horizon, None)?.joint_yx)
}
