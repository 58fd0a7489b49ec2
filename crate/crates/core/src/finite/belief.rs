use std::collections::BTreeMap;

use super::FiniteSystem;
use crate::numeric::xlogy_ratio;
use crate::policy::EstimationPolicy;
use crate::{Error, Result};

/// A history pair `(y^{t-1}, z̃^t)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryKey {
    pub ys: Vec<usize>,
    pub zs: Vec<usize>,
}

/// Mass of one history key and the state posterior `p(x_t | y^{t-1}, z̃^t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefEntry {
    pub mass: f64,
    pub x_post: Vec<f64>,
}

/// `b_t(y^{t-1}, z̃^t) = P(y^{t-1}, z̃^t | x̂^{t-1})` over its support.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub t: usize,
    pub entries: BTreeMap<HistoryKey, BeliefEntry>,
}

impl BeliefState {
    pub fn total(&self) -> f64 {
        self.entries.values().map(|e| e.mass).sum()
    }

    /// Marginal over `z̃^t`.
    pub fn z_marginal(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut out = BTreeMap::new();
        for (k, e) in &self.entries {
            *out.entry(k.zs.clone()).or_insert(0.0) += e.mass;
        }
        out
    }

    /// Marginal over `y^{t-1}`.
    pub fn y_marginal(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut out = BTreeMap::new();
        for (k, e) in &self.entries {
            *out.entry(k.ys.clone()).or_insert(0.0) += e.mass;
        }
        out
    }
}

/// The decision rules `a_t(x̂ | z̃^t)` of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCollection {
    pub t: usize,
    pub dists: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl PolicyCollection {
    fn get(&self, zs: &[usize]) -> Result<&[f64]> {
        self.dists
            .get(zs)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("policy collection has no rule for z̃^t = {zs:?}")))
    }
}

fn normalized(v: Vec<f64>) -> (f64, Vec<f64>) {
    let s: f64 = v.iter().sum();
    (s, v.into_iter().map(|p| p / s).collect())
}

/// `b_0(z̃_0) = sum_x Pz[x][z̃_0] mu_x0[x]`.
pub fn belief_init(fs: &FiniteSystem) -> BeliefState {
    let mut entries = BTreeMap::new();
    for z in 0..fs.nz {
        let joint: Vec<f64> = (0..fs.nx).map(|x| fs.pz[x][z] * fs.mu_x0[x]).collect();
        let (mass, x_post) = normalized(joint);
        if mass > 0.0 {
            entries.insert(HistoryKey { ys: vec![], zs: vec![z] }, BeliefEntry { mass, x_post });
        }
    }
    BeliefState { t: 0, entries }
}

/// Forward update of the belief after emitting `xhat` under `pol`.
pub fn belief_update(b: &BeliefState, pol: &PolicyCollection, xhat: usize, fs: &FiniteSystem) -> Result<BeliefState> {
    let mut weighted = Vec::with_capacity(b.entries.len());
    let mut den = 0.0;
    for (k, e) in &b.entries {
        let a = pol.get(&k.zs)?.get(xhat).copied().unwrap_or(0.0);
        den += a * e.mass;
        weighted.push((k, e, a * e.mass));
    }
    if den <= 0.0 {
        return Err(Error::ImpossibleAction(xhat));
    }
    let mut entries = BTreeMap::new();
    for (k, e, w) in weighted {
        if w <= 0.0 {
            continue;
        }
        for y in 0..fs.ny {
            let py = match k.ys.last() {
                None => fs.mu_y0[y],
                Some(&prev) => fs.py[prev][y],
            };
            if py <= 0.0 {
                continue;
            }
            let pred = fs.predict(&e.x_post, y);
            for z in 0..fs.nz {
                let joint: Vec<f64> = pred.iter().enumerate().map(|(x, p)| p * fs.pz[x][z]).collect();
                let (lik, x_post) = normalized(joint);
                if lik <= 0.0 {
                    continue;
                }
                let mut ys = k.ys.clone();
                ys.push(y);
                let mut zs = k.zs.clone();
                zs.push(z);
                entries.insert(HistoryKey { ys, zs }, BeliefEntry { mass: w * py * lik / den, x_post });
            }
        }
    }
    Ok(BeliefState { t: b.t + 1, entries })
}

/// `P(y^t | x̂^t) = sum over z̃^{t+1} of b_{t+1}(y^t, z̃^{t+1})`.
pub fn adversary_posterior(b_next: &BeliefState) -> BTreeMap<Vec<usize>, f64> {
    b_next.y_marginal()
}

/// The rules `policy` applies at stage `t = xhat_prefix.len()` on the support of `b`.
pub fn collection_for<P: EstimationPolicy + ?Sized>(
    policy: &P,
    xhat_prefix: &[usize],
    b: &BeliefState,
) -> Result<PolicyCollection> {
    let mut dists = BTreeMap::new();
    for k in b.entries.keys() {
        if !dists.contains_key(&k.zs) {
            dists.insert(k.zs.clone(), policy.probs_for(&k.zs, xhat_prefix)?);
        }
    }
    Ok(PolicyCollection { t: b.t, dists })
}

/// Beliefs `b_0..b_t` and rules `a_0..a_t` along `xhat_prefix = x̂^{t-1}`.
pub fn belief_along<P: EstimationPolicy + ?Sized>(
    fs: &FiniteSystem,
    policy: &P,
    xhat_prefix: &[usize],
) -> Result<(Vec<BeliefState>, Vec<PolicyCollection>)> {
    let mut beliefs = vec![belief_init(fs)];
    let mut rules = Vec::with_capacity(xhat_prefix.len() + 1);
    for (t, &xh) in xhat_prefix.iter().enumerate() {
        let pol = collection_for(policy, &xhat_prefix[..t], &beliefs[t])?;
        let next = belief_update(&beliefs[t], &pol, xh, fs)?;
        rules.push(pol);
        beliefs.push(next);
    }
    let last = beliefs.last().expect("nonempty");
    rules.push(collection_for(policy, xhat_prefix, last)?);
    Ok((beliefs, rules))
}

/// The two parts of a stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    /// Expected distortion at this stage.
    pub distortion: f64,
    /// `I(X̂_t; Y^{t-1} | x̂^{t-1})` under the belief.
    pub info: f64,
}

impl StageCost {
    pub fn total(&self, lambda: f64) -> f64 {
        self.distortion + lambda * self.info
    }
}

/// Stage cost split into expected distortion and the information term.
pub fn stage_cost_parts(b: &BeliefState, pol: &PolicyCollection, table: &[Vec<f64>]) -> Result<StageCost> {
    let m = table.first().map_or(0, Vec::len);
    let mut distortion = 0.0;
    // joint[y^{t-1}][x̂] = sum_z a b; marg[x̂] = sum joint.
    let mut joint: BTreeMap<&[usize], Vec<f64>> = BTreeMap::new();
    let mut y_mass: BTreeMap<&[usize], f64> = BTreeMap::new();
    let mut marg = vec![0.0; m];
    for (k, e) in &b.entries {
        let a = pol.get(&k.zs)?;
        if a.len() != m {
            return Err(Error::LengthMismatch { left: a.len(), right: m });
        }
        let row = joint.entry(k.ys.as_slice()).or_insert_with(|| vec![0.0; m]);
        *y_mass.entry(k.ys.as_slice()).or_insert(0.0) += e.mass;
        for (xh, &p) in a.iter().enumerate() {
            let w = p * e.mass;
            if w <= 0.0 {
                continue;
            }
            distortion += w * e.x_post.iter().zip(table).map(|(q, r)| q * r[xh]).sum::<f64>();
            row[xh] += w;
            marg[xh] += w;
        }
    }
    let mut info = 0.0;
    for (ys, row) in &joint {
        let py = y_mass[ys];
        for (xh, &p) in row.iter().enumerate() {
            info += xlogy_ratio(p, py * marg[xh]);
        }
    }
    Ok(StageCost { distortion, info })
}

/// `E[l_d] + lambda * I(X̂_t; Y^{t-1} | x̂^{t-1})` under `b` and `pol`.
pub fn stage_cost(b: &BeliefState, pol: &PolicyCollection, lambda: f64, table: &[Vec<f64>]) -> Result<f64> {
    Ok(stage_cost_parts(b, pol, table)?.total(lambda))
}

/// `log P(x̂_t | x̂^{t-1}, y^{t-1}) - log P(x̂_t | x̂^{t-1})` from the belief.
pub fn direct_info_loss(pol: &PolicyCollection, b: &BeliefState, xhat: usize, ys: &[usize]) -> Result<f64> {
    let mut num = 0.0;
    let mut y_mass = 0.0;
    let mut den = 0.0;
    for (k, e) in &b.entries {
        let a = pol.get(&k.zs)?.get(xhat).copied().unwrap_or(0.0);
        den += a * e.mass;
        if k.ys == ys {
            num += a * e.mass;
            y_mass += e.mass;
        }
    }
    if y_mass <= 0.0 || num <= 0.0 || den <= 0.0 {
        return Err(Error::ImpossibleHistory(format!(
            "x̂_t = {xhat} after y^(t-1) = {ys:?} has zero probability"
        )));
    }
    Ok((num / y_mass).ln() - den.ln())
}
