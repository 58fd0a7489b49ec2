//! Variational approximation of the information loss.
//!
//! Each per-step KL divergence is written as `sup_f E_P[f] - e^{-1} E_Q[e^f]`.
//! The critic `g_t(x̂, x̂^{t-1}, y-history)` targets the numerator law and
//! `f_t(x̂, x̂^{t-1})` the denominator law, both against an independent
//! uniform `X̃` over the `M` output cells, so `g_t - f_t` approximates
//! `log P(x̂_t | x̂^{t-1}, y-history) - log P(x̂_t | x̂^{t-1})`.
//!
//! Critics are multi-head: one evaluation returns the values for all `M`
//! candidate cells, which makes the exact average over `X̃` cheap.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::finite::{HistoryVariant, JointDistribution};
use crate::model::TrajectoryBatch;
use crate::rng::stream;
use crate::{Error, Result};

const MAX_CRITIC_PARAMS: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    /// One value per `(t, x̂-window, y-window, x̂)`.
    Tabular,
    Mlp,
}

/// Shape of one critic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticShape {
    pub kind: CriticKind,
    /// Output cells `M`.
    #[serde(rename = "M")]
    pub m: usize,
    /// Private alphabet size; 0 when the critic does not see `Y`.
    pub ny: usize,
    /// Final time index `T`.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Past outputs in the window.
    pub d_c: usize,
    /// Private symbols in the window (0 without `Y`).
    pub y_len: usize,
    /// Whether the time index is an input.
    pub time_input: bool,
    #[serde(default)]
    pub hidden: usize,
}

impl CriticShape {
    fn time_slots(&self) -> usize {
        if self.time_input {
            self.horizon + 1
        } else {
            1
        }
    }

    fn n_inputs(&self) -> usize {
        let t = if self.time_input { self.horizon + 1 } else { 0 };
        t + self.d_c * (self.m + 1) + self.y_len * (self.ny + 1)
    }

    fn n_params(&self) -> Result<usize> {
        let too_large = || Error::Config("critic is too large".into());
        let n = match self.kind {
            CriticKind::Tabular => {
                let mut keys = self.time_slots();
                for _ in 0..self.d_c {
                    keys = keys.checked_mul(self.m + 1).ok_or_else(too_large)?;
                }
                for _ in 0..self.y_len {
                    keys = keys.checked_mul(self.ny + 1).ok_or_else(too_large)?;
                }
                keys.checked_mul(self.m).ok_or_else(too_large)?
            }
            CriticKind::Mlp => {
                let h = self.hidden;
                self.n_inputs()
                    .checked_mul(h)
                    .and_then(|v| v.checked_add(h + self.m * h + self.m))
                    .ok_or_else(too_large)?
            }
        };
        if n > MAX_CRITIC_PARAMS {
            return Err(too_large());
        }
        Ok(n)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("critic needs M > 0".into()));
        }
        if (self.ny == 0) != (self.y_len == 0) {
            return Err(Error::Config("critic y window needs ny > 0 and y_len > 0 together".into()));
        }
        if self.kind == CriticKind::Mlp && (self.hidden == 0 || self.hidden > 4096) {
            return Err(Error::Config(format!("invalid critic hidden width {}", self.hidden)));
        }
        if self.kind == CriticKind::Tabular && self.hidden != 0 {
            return Err(Error::Config("tabular critic must have hidden = 0".into()));
        }
        if self.horizon > 100_000 || self.d_c > 64 || self.y_len > 64 {
            return Err(Error::Config("critic window or horizon too large".into()));
        }
        self.n_params().map(|_| ())
    }
}

/// The window a critic sees: time, past outputs and private symbols,
/// pad-aware (`M` pads outputs, `ny` pads private symbols).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CriticInput {
    pub t: usize,
    pub xwin: Vec<usize>,
    pub ywin: Vec<usize>,
}

fn tail_padded(hist: &[usize], len: usize, pad: usize) -> Vec<usize> {
    let take = hist.len().min(len);
    let mut out = vec![pad; len - take];
    out.extend_from_slice(&hist[hist.len() - take..]);
    out
}

/// A real-valued critic over `M` candidate cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub shape: CriticShape,
    pub params: Vec<f64>,
}

impl Critic {
    /// All-zero critic (`g = 0` everywhere for tabular, zero output layer for MLP).
    pub fn new(shape: CriticShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let n = shape.n_params()?;
        let mut params = vec![0.0; n];
        if shape.kind == CriticKind::Mlp {
            let mut rng = stream(seed);
            let scale = 1.0 / ((shape.d_c + shape.y_len + 1) as f64).sqrt();
            for w in &mut params[..shape.n_inputs() * shape.hidden] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { shape, params })
    }

    /// Input window at time `t` from `x̂^{t-1}` and the private history the
    /// critic conditions on (already cut to the chosen variant).
    pub fn input(&self, t: usize, xhats: &[usize], ys: &[usize]) -> CriticInput {
        let s = &self.shape;
        CriticInput {
            t: if s.time_input { t.min(s.horizon) } else { 0 },
            xwin: tail_padded(xhats, s.d_c, s.m),
            ywin: if s.y_len == 0 { vec![] } else { tail_padded(ys, s.y_len, s.ny) },
        }
    }

    fn check(&self, h: &CriticInput) -> Result<()> {
        let s = &self.shape;
        if h.xwin.len() != s.d_c || h.ywin.len() != s.y_len {
            return Err(Error::Config("critic input window does not match its shape".into()));
        }
        if h.t >= s.time_slots() || h.xwin.iter().any(|&v| v > s.m) || h.ywin.iter().any(|&v| v > s.ny) {
            return Err(Error::Config("critic input symbol out of range".into()));
        }
        Ok(())
    }

    fn key(&self, h: &CriticInput) -> usize {
        let s = &self.shape;
        let k = h.xwin.iter().fold(h.t, |acc, &v| acc * (s.m + 1) + v);
        h.ywin.iter().fold(k, |acc, &v| acc * (s.ny + 1) + v)
    }

    fn features(&self, h: &CriticInput) -> Vec<usize> {
        let s = &self.shape;
        let mut f = Vec::with_capacity(1 + s.d_c + s.y_len);
        let mut off = 0;
        if s.time_input {
            f.push(h.t);
            off = s.horizon + 1;
        }
        for (i, &v) in h.xwin.iter().enumerate() {
            f.push(off + i * (s.m + 1) + v);
        }
        off += s.d_c * (s.m + 1);
        for (i, &v) in h.ywin.iter().enumerate() {
            f.push(off + i * (s.ny + 1) + v);
        }
        f
    }

    fn mlp_forward(&self, feats: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (n_in, hd, m) = (self.shape.n_inputs(), self.shape.hidden, self.shape.m);
        let w1 = &self.params[..n_in * hd];
        let b1 = &self.params[n_in * hd..n_in * hd + hd];
        let w2 = &self.params[n_in * hd + hd..n_in * hd + hd + m * hd];
        let b2 = &self.params[n_in * hd + hd + m * hd..];
        let mut a = b1.to_vec();
        for &k in feats {
            for (aj, w) in a.iter_mut().zip(&w1[k * hd..(k + 1) * hd]) {
                *aj += w;
            }
        }
        for aj in &mut a {
            *aj = aj.tanh();
        }
        let out = (0..m)
            .map(|i| b2[i] + w2[i * hd..(i + 1) * hd].iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        (a, out)
    }

    /// Values for every candidate cell.
    pub fn eval_all(&self, h: &CriticInput) -> Result<Vec<f64>> {
        self.check(h)?;
        let m = self.shape.m;
        Ok(match self.shape.kind {
            CriticKind::Tabular => {
                let k = self.key(h);
                self.params[k * m..(k + 1) * m].to_vec()
            }
            CriticKind::Mlp => self.mlp_forward(&self.features(h)).1,
        })
    }

    pub fn eval(&self, h: &CriticInput, xhat: usize) -> Result<f64> {
        if xhat >= self.shape.m {
            return Err(Error::Config(format!("output cell {xhat} out of range")));
        }
        Ok(self.eval_all(h)?[xhat])
    }

    /// Values for every cell plus the hidden activations backprop needs.
    fn forward(&self, h: &CriticInput) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        self.check(h)?;
        Ok(match self.shape.kind {
            CriticKind::Tabular => {
                let m = self.shape.m;
                let k = self.key(h);
                (self.params[k * m..(k + 1) * m].to_vec(), vec![], vec![k])
            }
            CriticKind::Mlp => {
                let feats = self.features(h);
                let (a, out) = self.mlp_forward(&feats);
                (out, a, feats)
            }
        })
    }

    /// Adds `sum_i dout[i] * grad value_i` into `grad`, given the cached
    /// activations and active inputs of [`Critic::forward`].
    fn backprop(&self, a: &[f64], feats: &[usize], dout: &[f64], grad: &mut [f64]) {
        let m = self.shape.m;
        match self.shape.kind {
            CriticKind::Tabular => {
                let k = feats[0];
                for (g, d) in grad[k * m..(k + 1) * m].iter_mut().zip(dout) {
                    *g += d;
                }
            }
            CriticKind::Mlp => {
                let (n_in, hd) = (self.shape.n_inputs(), self.shape.hidden);
                let w2_off = n_in * hd + hd;
                let b2_off = w2_off + m * hd;
                let mut da = vec![0.0; hd];
                for (i, &d) in dout.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad[b2_off + i] += d;
                    let row = w2_off + i * hd;
                    for j in 0..hd {
                        grad[row + j] += d * a[j];
                        da[j] += d * self.params[row + j];
                    }
                }
                for j in 0..hd {
                    let dpre = da[j] * (1.0 - a[j] * a[j]);
                    grad[n_in * hd + j] += dpre;
                    for &k in feats {
                        grad[k * hd + j] += dpre;
                    }
                }
            }
        }
    }

    /// Average of `sum_t [v(x̂_t) - (1/M) sum_i e^{v(i) - 1}]` over the
    /// dataset and its gradient.
    pub fn objective(&self, data: &[WeightedInput], norm: f64) -> Result<(f64, Vec<f64>)> {
        let m = self.shape.m as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        let mut dout = vec![0.0; self.shape.m];
        for w in data {
            let (v, a, feats) = self.forward(&w.input)?;
            let total: f64 = w.counts.iter().sum();
            for (i, (&vi, &ci)) in v.iter().zip(&w.counts).enumerate() {
                let e = (vi - 1.0).exp();
                value += ci * vi - total * e / m;
                dout[i] = (ci - total * e / m) / norm;
            }
            self.backprop(&a, &feats, &dout, &mut grad);
        }
        Ok((value / norm, grad))
    }

    fn to_checkpoint(&self) -> CriticCheckpoint {
        let s = &self.shape;
        let shapes = match s.kind {
            CriticKind::Tabular => vec![vec![self.params.len() / s.m, s.m]],
            CriticKind::Mlp => vec![vec![s.n_inputs(), s.hidden], vec![s.hidden], vec![s.m, s.hidden], vec![s.m]],
        };
        CriticCheckpoint { shape: s.clone(), shapes, params: self.params.clone() }
    }

    fn from_checkpoint(c: CriticCheckpoint) -> Result<Self> {
        let blank = Self::new(c.shape, 0)?;
        let declared = blank.to_checkpoint().shapes;
        if c.shapes != declared {
            return Err(Error::Config(format!("critic shapes {:?} do not match {:?}", c.shapes, declared)));
        }
        if c.params.len() != blank.params.len() {
            return Err(Error::LengthMismatch { left: c.params.len(), right: blank.params.len() });
        }
        if c.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("critic checkpoint contains non-finite parameters".into()));
        }
        Ok(Self { shape: blank.shape, params: c.params })
    }
}

/// Outcome counts of `x̂_t` for one critic input, weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedInput {
    pub input: CriticInput,
    pub counts: Vec<f64>,
}

/// The `g` and `f` families and the private history they use.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub g: Critic,
    pub f: Critic,
    pub variant: HistoryVariant,
}

/// Settings shared by the two critic families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub kind: CriticKind,
    pub d_c: usize,
    pub hidden: usize,
    pub time_input: bool,
}

impl CriticParams {
    /// Zero critics; the `g` window holds `d_c + 1` private symbols.
    pub fn new(cfg: &CriticConfig, m: usize, ny: usize, horizon: usize, variant: HistoryVariant, seed: u64) -> Result<Self> {
        let (time_input, hidden) = match cfg.kind {
            CriticKind::Tabular => (cfg.time_input, 0),
            CriticKind::Mlp => (cfg.time_input, cfg.hidden),
        };
        let shape = |with_y: bool| CriticShape {
            kind: cfg.kind,
            m,
            ny: if with_y { ny } else { 0 },
            horizon,
            d_c: cfg.d_c,
            y_len: if with_y { cfg.d_c + 1 } else { 0 },
            time_input,
            hidden,
        };
        Ok(Self {
            g: Critic::new(shape(true), crate::rng::split_seed(seed, 0))?,
            f: Critic::new(shape(false), crate::rng::split_seed(seed, 1))?,
            variant,
        })
    }

    /// Private history the `g` critic conditions on at time `t`, cut from `y^T`.
    pub fn y_cut<'a>(&self, t: usize, ys: &'a [usize]) -> &'a [usize] {
        match self.variant {
            HistoryVariant::Past => &ys[..t.min(ys.len())],
            HistoryVariant::Present => &ys[..(t + 1).min(ys.len())],
        }
    }

    pub fn g_input(&self, t: usize, xhats: &[usize], ys: &[usize]) -> CriticInput {
        self.g.input(t, xhats, self.y_cut(t, ys))
    }

    pub fn f_input(&self, t: usize, xhats: &[usize]) -> CriticInput {
        self.f.input(t, xhats, &[])
    }

    pub fn to_json(&self) -> String {
        let doc = CriticDocument { variant: self.variant, g: self.g.to_checkpoint(), f: self.f.to_checkpoint() };
        serde_json::to_string_pretty(&doc).expect("critic checkpoint serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: CriticDocument = serde_json::from_str(s)?;
        if doc.g.shape.y_len == 0 || doc.f.shape.y_len != 0 {
            return Err(Error::Config("the g critic must see Y and the f critic must not".into()));
        }
        Ok(Self { g: Critic::from_checkpoint(doc.g)?, f: Critic::from_checkpoint(doc.f)?, variant: doc.variant })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticCheckpoint {
    #[serde(flatten)]
    shape: CriticShape,
    shapes: Vec<Vec<usize>>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticDocument {
    variant: HistoryVariant,
    g: CriticCheckpoint,
    f: CriticCheckpoint,
}

/// Samples aggregated by critic input: identical windows share one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticDataset {
    pub g: Vec<WeightedInput>,
    pub f: Vec<WeightedInput>,
    /// Divisor turning sums into averages (rollouts, or 1 for exact laws).
    pub norm: f64,
}

fn collect(map: BTreeMap<CriticInput, Vec<f64>>) -> Vec<WeightedInput> {
    map.into_iter().map(|(input, counts)| WeightedInput { input, counts }).collect()
}

impl CriticDataset {
    pub fn from_batch(batch: &TrajectoryBatch, critics: &CriticParams) -> Self {
        let m = critics.g.shape.m;
        let mut g: BTreeMap<CriticInput, Vec<f64>> = BTreeMap::new();
        let mut f: BTreeMap<CriticInput, Vec<f64>> = BTreeMap::new();
        for r in &batch.rollouts {
            for t in 0..r.xhat.len() {
                let xh = r.xhat[t];
                g.entry(critics.g_input(t, &r.xhat[..t], &r.y)).or_insert_with(|| vec![0.0; m])[xh] += 1.0;
                f.entry(critics.f_input(t, &r.xhat[..t])).or_insert_with(|| vec![0.0; m])[xh] += 1.0;
            }
        }
        Self { g: collect(g), f: collect(f), norm: batch.len() as f64 }
    }

    /// Exact expectations under a law of `(y^T, x̂^T)`.
    pub fn from_joint(joint: &JointDistribution, critics: &CriticParams) -> Self {
        let m = critics.g.shape.m;
        let steps = joint.horizon + 1;
        let b_len = joint.n_b.pow(steps as u32);
        let mut g: BTreeMap<CriticInput, Vec<f64>> = BTreeMap::new();
        let mut f: BTreeMap<CriticInput, Vec<f64>> = BTreeMap::new();
        for (i, &p) in joint.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let ys = digits(i / b_len, joint.n_a, steps);
            let xs = digits(i % b_len, joint.n_b, steps);
            for t in 0..steps {
                g.entry(critics.g_input(t, &xs[..t], &ys)).or_insert_with(|| vec![0.0; m])[xs[t]] += p;
                f.entry(critics.f_input(t, &xs[..t])).or_insert_with(|| vec![0.0; m])[xs[t]] += p;
            }
        }
        Self { g: collect(g), f: collect(f), norm: 1.0 }
    }
}

pub(crate) fn digits(mut v: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for d in out.iter_mut().rev() {
        *d = v % base;
        v /= base;
    }
    out
}

/// `F1(phi)` and its gradient.
pub fn objective_g(critics: &CriticParams, data: &CriticDataset) -> Result<(f64, Vec<f64>)> {
    critics.g.objective(&data.g, data.norm)
}

/// `F2(psi)` and its gradient.
pub fn objective_f(critics: &CriticParams, data: &CriticDataset) -> Result<(f64, Vec<f64>)> {
    critics.f.objective(&data.f, data.norm)
}

/// Inner-loop settings: ascent steps `alpha` (g) and `beta` (f). Tabular
/// critics take steps preconditioned by input frequency; steps up to 1 are
/// stable there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    /// Stop when `|F_k - F_{k-1}|` falls below this.
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub f1: f64,
    pub f2: f64,
    pub iters_g: usize,
    pub iters_f: usize,
}

/// Per-parameter step multipliers. A tabular entry moves by its input's
/// share of the data, so the step is on the scale of conditional frequencies.
fn preconditioner(critic: &Critic, data: &[WeightedInput], norm: f64) -> Vec<f64> {
    let mut scale = vec![1.0; critic.params.len()];
    if critic.shape.kind != CriticKind::Tabular {
        return scale;
    }
    let m = critic.shape.m;
    let mut mass = vec![0.0; critic.params.len() / m];
    for w in data {
        mass[critic.key(&w.input)] += w.counts.iter().sum::<f64>();
    }
    for (k, &n) in mass.iter().enumerate() {
        if n > 0.0 {
            scale[k * m..(k + 1) * m].iter_mut().for_each(|s| *s = norm / n);
        }
    }
    scale
}

fn ascend(critic: &mut Critic, data: &[WeightedInput], norm: f64, step: f64, max_iters: usize, tol: f64) -> Result<(f64, usize)> {
    for w in data {
        critic.check(&w.input)?;
    }
    let scale = preconditioner(critic, data, norm);
    let (mut value, mut grad) = critic.objective(data, norm)?;
    for it in 0..max_iters {
        critic.params.iter_mut().zip(grad.iter().zip(&scale)).for_each(|(p, (g, s))| *p += step * s * g);
        let (v, g) = critic.objective(data, norm)?;
        let delta = (v - value).abs();
        value = v;
        grad = g;
        if delta < tol {
            return Ok((value, it + 1));
        }
    }
    Ok((value, max_iters))
}

/// Gradient ascent on `F1` and `F2` from the current (warm-started) critics.
pub fn fit_critics(critics: &mut CriticParams, data: &CriticDataset, cfg: &FitConfig) -> Result<FitReport> {
    let (f1, iters_g) = ascend(&mut critics.g, &data.g, data.norm, cfg.alpha, cfg.max_iters, cfg.tol)?;
    let (f2, iters_f) = ascend(&mut critics.f, &data.f, data.norm, cfg.beta, cfg.max_iters, cfg.tol)?;
    Ok(FitReport { f1, f2, iters_g, iters_f })
}

/// Sets tabular critics to the maximizers `log(M P(x̂ | window)) + 1` under
/// the exact law; inputs never reached stay at 0.
pub fn optimal_tabular(critics: &mut CriticParams, joint: &JointDistribution) -> Result<()> {
    if critics.g.shape.kind != CriticKind::Tabular || critics.f.shape.kind != CriticKind::Tabular {
        return Err(Error::Config("optimal critics are only available in tabular form".into()));
    }
    let data = CriticDataset::from_joint(joint, critics);
    for (critic, rows) in [(&mut critics.g, &data.g), (&mut critics.f, &data.f)] {
        let m = critic.shape.m;
        critic.params.iter_mut().for_each(|p| *p = 0.0);
        for w in rows {
            critic.check(&w.input)?;
            let k = critic.key(&w.input);
            let total: f64 = w.counts.iter().sum();
            for (i, &c) in w.counts.iter().enumerate() {
                if c > 0.0 {
                    critic.params[k * m + i] = (m as f64 * c / total).ln() + 1.0;
                }
            }
        }
    }
    Ok(())
}

/// `g_t - f_t` at the realized output and histories (`ys = y^T` or any
/// prefix long enough for the variant).
pub fn info_loss_estimate(critics: &CriticParams, t: usize, xhat: usize, xhats: &[usize], ys: &[usize]) -> Result<f64> {
    Ok(critics.g.eval(&critics.g_input(t, xhats, ys), xhat)? - critics.f.eval(&critics.f_input(t, xhats), xhat)?)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    if let Some(i) = (0..p.len()).find(|&i| p[i] > 0.0 && q[i] <= 0.0) {
        return Err(Error::SupportMismatch(format!("P has mass at {i} where Q has none")));
    }
    Ok(())
}

/// `E_P[f] - e^{-1} E_Q[e^f]`, a lower bound on `D_KL(P || Q)`.
pub fn kl_variational(p: &[f64], q: &[f64], f: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    if f.len() != p.len() {
        return Err(Error::LengthMismatch { left: f.len(), right: p.len() });
    }
    let ep: f64 = p.iter().zip(f).filter(|(pi, _)| **pi > 0.0).map(|(pi, fi)| pi * fi).sum();
    let eq: f64 = q.iter().zip(f).map(|(qi, fi)| qi * fi.exp()).sum();
    Ok(ep - eq / std::f64::consts::E)
}

/// Maximizes the bound over tabular `f` by gradient ascent from `f = 0`;
/// returns the final value and `f`.
pub fn kl_variational_fit(p: &[f64], q: &[f64], step: f64, max_iters: usize, tol: f64) -> Result<(f64, Vec<f64>)> {
    check_pair(p, q)?;
    let mut f = vec![0.0; p.len()];
    let mut value = kl_variational(p, q, &f)?;
    for _ in 0..max_iters {
        for i in 0..f.len() {
            f[i] += step * (p[i] - q[i] * (f[i] - 1.0).exp());
        }
        let v = kl_variational(p, q, &f)?;
        let done = (v - value).abs() < tol;
        value = v;
        if done {
            break;
        }
    }
    Ok((value, f))
}

/// `D_KL(P || Q)` by the direct formula.
pub fn kl_direct(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter().zip(q).map(|(&pi, &qi)| crate::numeric::xlogy_ratio(pi, qi)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_kl_converges() {
        let (v, f) = kl_variational_fit(&[0.75, 0.25], &[0.5, 0.5], 1.0, 100_000, 1e-15).unwrap();
        let direct = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((v - direct).abs() < 1e-9, "{v}");
        assert!((f[0] - (1.5f64.ln() + 1.0)).abs() < 1e-4);
    }

    #[test]
    fn equal_laws_at_unit_critic_give_zero() {
        let p = [0.2, 0.3, 0.5];
        assert!(kl_variational(&p, &p, &[1.0; 3]).unwrap().abs() < 1e-15);
        assert!(matches!(kl_variational(&[0.5, 0.5], &[1.0, 0.0], &[0.0; 2]), Err(Error::SupportMismatch(_))));
    }

    #[test]
    fn zero_critic_evaluates_to_zero() {
        let cfg = CriticConfig { kind: CriticKind::Mlp, d_c: 1, hidden: 4, time_input: true };
        let c = CriticParams::new(&cfg, 3, 2, 4, HistoryVariant::Past, 1).unwrap();
        let v = info_loss_estimate(&c, 2, 1, &[0, 2], &[1, 0, 1]).unwrap();
        assert_eq!(v, 0.0);
    }
}
