//! Stochastic estimation policies over the `M` tessellation cells.
//!
//! A policy sees the window `h_t` of the last `d + 1` measurement cells and
//! the last `d` output cells. Before `t = d` the window is padded with a
//! reserved symbol (`N` for measurements, `M` for outputs) so that start-up
//! histories never alias real cells.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numeric::softmax;
use crate::rng::stream;
use crate::{Error, Result};

/// Largest tabular policy accepted, in parameters.
pub const MAX_TABULAR_PARAMS: usize = 20_000_000;

/// The window `h_t`, pad symbols only in leading positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryWindow {
    /// `d + 1` measurement symbols, oldest first; `N` is the pad.
    pub z: Vec<usize>,
    /// `d` output symbols, oldest first; `M` is the pad.
    pub xhat: Vec<usize>,
}

impl HistoryWindow {
    /// Window at time `t = z_hist.len() - 1` given the full histories
    /// `z_hist = z̃^t` and `xhat_hist = x̂^{t-1}`.
    pub fn from_history(d: usize, n_z: usize, m: usize, z_hist: &[usize], xhat_hist: &[usize]) -> Self {
        Self {
            z: tail_padded(z_hist, d + 1, n_z),
            xhat: tail_padded(xhat_hist, d, m),
        }
    }
}

fn tail_padded(hist: &[usize], len: usize, pad: usize) -> Vec<usize> {
    let take = hist.len().min(len);
    let mut out = vec![pad; len - take];
    out.extend_from_slice(&hist[hist.len() - take..]);
    out
}

/// A policy `pi(x̂_t | z̃^t, x̂^{t-1})` with a differentiable parameterization.
/// Exact enumeration and gradient oracles are written against this trait.
pub trait EstimationPolicy {
    fn n_out(&self) -> usize;
    fn n_params(&self) -> usize;
    /// Output distribution given `z_hist = z̃^t` and `xhat_hist = x̂^{t-1}`.
    fn probs_for(&self, z_hist: &[usize], xhat_hist: &[usize]) -> Result<Vec<f64>>;
    /// Adds `weight * grad log pi(xhat | ...)` into `grad`.
    fn add_score_for(
        &self,
        z_hist: &[usize],
        xhat_hist: &[usize],
        xhat: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Tabular,
    Mlp,
}

/// Parameters `theta` of a windowed policy.
///
/// Tabular: one logit vector per window key. MLP: one-hot window features,
/// one tanh hidden layer and a softmax output; the flat layout is
/// `[W1 (in x H, input-major), b1 (H), W2 (M x H), b2 (M)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    kind: PolicyKind,
    d: usize,
    n_z: usize,
    m: usize,
    hidden: usize,
    pub params: Vec<f64>,
}

impl PolicyParams {
    pub fn tabular(d: usize, n_z: usize, m: usize) -> Result<Self> {
        let keys = tabular_keys(d, n_z, m)?;
        Ok(Self { kind: PolicyKind::Tabular, d, n_z, m, hidden: 0, params: vec![0.0; keys * m] })
    }

    /// Random MLP with a near-uniform initial output distribution.
    pub fn mlp(d: usize, n_z: usize, m: usize, hidden: usize, seed: u64) -> Result<Self> {
        if m == 0 || n_z == 0 || hidden == 0 {
            return Err(Error::Config("mlp policy needs M, N and hidden width > 0".into()));
        }
        let mut p = Self { kind: PolicyKind::Mlp, d, n_z, m, hidden, params: Vec::new() };
        let n_in = p.n_inputs();
        let mut rng = stream(seed);
        let in_scale = 1.0 / ((2 * d + 1) as f64).sqrt();
        let out_scale = 0.1 / (hidden as f64).sqrt();
        let mut params = Vec::with_capacity(p.mlp_len());
        params.extend((0..n_in * hidden).map(|_| in_scale * rng.sample::<f64, _>(StandardNormal)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..m * hidden).map(|_| out_scale * rng.sample::<f64, _>(StandardNormal)));
        params.extend(std::iter::repeat_n(0.0, m));
        p.params = params;
        Ok(p)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_out(&self) -> usize {
        self.m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn n_inputs(&self) -> usize {
        (self.d + 1) * (self.n_z + 1) + self.d * (self.m + 1)
    }

    fn mlp_len(&self) -> usize {
        let (n_in, h, m) = (self.n_inputs(), self.hidden, self.m);
        n_in * h + h + m * h + m
    }

    fn check_window(&self, h: &HistoryWindow) -> Result<()> {
        if h.z.len() != self.d + 1 || h.xhat.len() != self.d {
            return Err(Error::Config(format!(
                "history window of shape ({}, {}) does not match policy depth {}",
                h.z.len(),
                h.xhat.len(),
                self.d
            )));
        }
        if h.z.iter().any(|&s| s > self.n_z) || h.xhat.iter().any(|&s| s > self.m) {
            return Err(Error::Config("history window symbol out of range".into()));
        }
        Ok(())
    }

    fn tabular_key(&self, h: &HistoryWindow) -> usize {
        let zk = h.z.iter().fold(0, |acc, &s| acc * (self.n_z + 1) + s);
        h.xhat.iter().fold(zk, |acc, &s| acc * (self.m + 1) + s)
    }

    /// Active one-hot feature indices of a window.
    fn features(&self, h: &HistoryWindow) -> Vec<usize> {
        let mut f = Vec::with_capacity(2 * self.d + 1);
        for (i, &s) in h.z.iter().enumerate() {
            f.push(i * (self.n_z + 1) + s);
        }
        let off = (self.d + 1) * (self.n_z + 1);
        for (i, &s) in h.xhat.iter().enumerate() {
            f.push(off + i * (self.m + 1) + s);
        }
        f
    }

    /// Hidden activations and logits of the MLP.
    fn mlp_forward(&self, feats: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (n_in, hd, m) = (self.n_inputs(), self.hidden, self.m);
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
        let logits = (0..m)
            .map(|i| b2[i] + w2[i * hd..(i + 1) * hd].iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        (a, logits)
    }

    pub fn logits(&self, h: &HistoryWindow) -> Result<Vec<f64>> {
        self.check_window(h)?;
        Ok(match self.kind {
            PolicyKind::Tabular => {
                let k = self.tabular_key(h);
                self.params[k * self.m..(k + 1) * self.m].to_vec()
            }
            PolicyKind::Mlp => self.mlp_forward(&self.features(h)).1,
        })
    }

    /// Output distribution `pi_theta(. | h)`.
    pub fn dist(&self, h: &HistoryWindow) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(h)?))
    }

    /// Adds `weight * grad_theta log pi_theta(xhat | h)` into `grad`.
    pub fn add_score(&self, h: &HistoryWindow, xhat: usize, weight: f64, grad: &mut [f64]) -> Result<()> {
        self.check_window(h)?;
        if xhat >= self.m {
            return Err(Error::Config(format!("output cell {xhat} out of range")));
        }
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch { left: grad.len(), right: self.params.len() });
        }
        match self.kind {
            PolicyKind::Tabular => {
                let k = self.tabular_key(h);
                let p = softmax(&self.params[k * self.m..(k + 1) * self.m]);
                for (i, pi) in p.iter().enumerate() {
                    let ind = if i == xhat { 1.0 } else { 0.0 };
                    grad[k * self.m + i] += weight * (ind - pi);
                }
            }
            PolicyKind::Mlp => {
                let (n_in, hd, m) = (self.n_inputs(), self.hidden, self.m);
                let feats = self.features(h);
                let (a, logits) = self.mlp_forward(&feats);
                let p = softmax(&logits);
                let dl: Vec<f64> = (0..m)
                    .map(|i| weight * (if i == xhat { 1.0 } else { 0.0 } - p[i]))
                    .collect();
                let w2_off = n_in * hd + hd;
                let b2_off = w2_off + m * hd;
                let mut da = vec![0.0; hd];
                for i in 0..m {
                    grad[b2_off + i] += dl[i];
                    let row = w2_off + i * hd;
                    for j in 0..hd {
                        grad[row + j] += dl[i] * a[j];
                        da[j] += dl[i] * self.params[row + j];
                    }
                }
                for j in 0..hd {
                    let dpre = da[j] * (1.0 - a[j] * a[j]);
                    grad[n_in * hd + j] += dpre;
                    for &k in &feats {
                        grad[k * hd + j] += dpre;
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense `grad_theta log pi_theta(xhat | h)`.
    pub fn log_prob_grad(&self, h: &HistoryWindow, xhat: usize) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.add_score(h, xhat, 1.0, &mut g)?;
        Ok(g)
    }

    fn window(&self, z_hist: &[usize], xhat_hist: &[usize]) -> HistoryWindow {
        HistoryWindow::from_history(self.d, self.n_z, self.m, z_hist, xhat_hist)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let shapes = match self.kind {
            PolicyKind::Tabular => vec![vec![self.params.len() / self.m, self.m]],
            PolicyKind::Mlp => vec![
                vec![self.n_inputs(), self.hidden],
                vec![self.hidden],
                vec![self.m, self.hidden],
                vec![self.m],
            ],
        };
        Checkpoint {
            kind: self.kind,
            d: self.d,
            m: self.m,
            n: self.n_z,
            hidden: self.hidden,
            shapes,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.m == 0 || c.n == 0 {
            return Err(Error::Config("checkpoint needs M > 0 and N > 0".into()));
        }
        if c.d > 64 {
            return Err(Error::Config(format!("window depth {} is too large", c.d)));
        }
        let mut p = match c.kind {
            PolicyKind::Tabular => {
                if c.hidden != 0 {
                    return Err(Error::Config("tabular checkpoint must have hidden = 0".into()));
                }
                Self::tabular(c.d, c.n, c.m)?
            }
            PolicyKind::Mlp => {
                if c.hidden == 0 || c.hidden > 4096 {
                    return Err(Error::Config(format!("invalid hidden width {}", c.hidden)));
                }
                let p = Self { kind: PolicyKind::Mlp, d: c.d, n_z: c.n, m: c.m, hidden: c.hidden, params: vec![] };
                if p.n_inputs().saturating_mul(c.hidden) > MAX_TABULAR_PARAMS {
                    return Err(Error::Config("mlp checkpoint is too large".into()));
                }
                p
            }
        };
        let expected = match p.kind {
            PolicyKind::Tabular => p.params.len(),
            PolicyKind::Mlp => p.mlp_len(),
        };
        let declared = p.to_checkpoint_shapes();
        if c.shapes != declared {
            return Err(Error::Config(format!("checkpoint shapes {:?} do not match {:?}", c.shapes, declared)));
        }
        if c.params.len() != expected {
            return Err(Error::LengthMismatch { left: c.params.len(), right: expected });
        }
        if c.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("checkpoint contains non-finite parameters".into()));
        }
        p.params = c.params;
        Ok(p)
    }

    fn to_checkpoint_shapes(&self) -> Vec<Vec<usize>> {
        match self.kind {
            PolicyKind::Tabular => vec![vec![tabular_keys(self.d, self.n_z, self.m).unwrap_or(0), self.m]],
            PolicyKind::Mlp => vec![
                vec![self.n_inputs(), self.hidden],
                vec![self.hidden],
                vec![self.m, self.hidden],
                vec![self.m],
            ],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }
}

fn tabular_keys(d: usize, n_z: usize, m: usize) -> Result<usize> {
    if m == 0 || n_z == 0 {
        return Err(Error::Config("policy needs M > 0 and N > 0".into()));
    }
    let mut keys: usize = 1;
    for _ in 0..=d {
        keys = keys.checked_mul(n_z + 1).ok_or_else(too_large)?;
    }
    for _ in 0..d {
        keys = keys.checked_mul(m + 1).ok_or_else(too_large)?;
    }
    if keys.checked_mul(m).is_none_or(|n| n > MAX_TABULAR_PARAMS) {
        return Err(too_large());
    }
    Ok(keys)
}

fn too_large() -> Error {
    Error::Config("tabular policy table is too large; use the mlp kind".into())
}

impl EstimationPolicy for PolicyParams {
    fn n_out(&self) -> usize {
        self.m
    }

    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn probs_for(&self, z_hist: &[usize], xhat_hist: &[usize]) -> Result<Vec<f64>> {
        self.dist(&self.window(z_hist, xhat_hist))
    }

    fn add_score_for(
        &self,
        z_hist: &[usize],
        xhat_hist: &[usize],
        xhat: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.add_score(&self.window(z_hist, xhat_hist), xhat, weight, grad)
    }
}

/// JSON checkpoint `{kind, d, M, N, hidden, shapes, params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: PolicyKind,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub hidden: usize,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<f64>,
}
