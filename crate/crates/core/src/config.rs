//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryMode;
use crate::finite::{discretize, Discretization};
use crate::loss::Distortion;
use crate::model::{LinGaussDynamics, MeasurementModel, PrivateChain, Quantizer, SystemModel, Tessellation};
use crate::numeric::check_distribution;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSection,
    pub quantizer: QuantizerSection,
    pub tessellation: TessellationSection,
    pub horizon: HorizonSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub tradeoff: TradeoffSection,
}

/// Initial private state: a label or a distribution over the states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialPrivate {
    Label(i64),
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: f64,
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    pub sigma_w: f64,
    pub sigma_v: f64,
    /// Labels of the private states (the values entering the dynamics).
    pub y_states: Vec<i64>,
    pub transition: Vec<Vec<f64>>,
    /// Defaults to the stationary law of `transition`.
    #[serde(default)]
    pub y0: Option<InitialPrivate>,
    #[serde(default)]
    pub x0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    pub delta: f64,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TessellationSection {
    pub delta_x: f64,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    #[serde(rename = "T")]
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    /// Emission model used on privacy-aware outputs.
    pub mode: AdversaryMode,
    /// Std of the Gaussian emissions on unperturbed values; defaults to
    /// `sqrt(sigma_v^2 + delta^2 / 12)`.
    pub sigma_adv: Option<f64>,
    pub smoothing: f64,
    /// Held-out rollouts for the emission table.
    pub holdout: usize,
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self { mode: AdversaryMode::Table, sigma_adv: None, smoothing: 1.0, holdout: 10_000 }
    }
}

/// State grid of the finite surrogate: each tessellation cell split `factor` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub factor: usize,
}

impl Default for RefineSection {
    fn default() -> Self {
        Self { factor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffSection {
    pub lambdas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub eval_rollouts: usize,
    /// Also add one noise level per trained policy, found by bisection, whose
    /// adversary accuracy matches the policy's.
    pub match_sigma: bool,
    pub match_tol: f64,
    /// Upper end of the bisection bracket.
    pub sigma_max: f64,
    /// Rollouts written as per-trajectory CSVs.
    pub trace_rollouts: usize,
}

impl Default for TradeoffSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0],
            eval_rollouts: 200,
            match_sigma: true,
            match_tol: 0.005,
            sigma_max: 4.0,
            trace_rollouts: 1,
        }
    }
}

fn finite_nonneg(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{path} must be finite and >= 0, got {v}")))
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let n = s.y_states.len();
        if n == 0 {
            return Err(Error::Config("system.y_states must not be empty".into()));
        }
        if s.transition.len() != n {
            return Err(Error::Config(format!("system.transition has {} rows for {n} states", s.transition.len())));
        }
        for (i, row) in s.transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("system.transition[{i}] has {} entries for {n} states", row.len())));
            }
            check_distribution(&format!("system.transition[{i}]"), row, 1e-10)?;
        }
        match &s.y0 {
            Some(InitialPrivate::Label(l)) if !s.y_states.contains(l) => {
                return Err(Error::Config(format!("system.y0 label {l} is not in system.y_states")));
            }
            Some(InitialPrivate::Distribution(d)) => {
                if d.len() != n {
                    return Err(Error::Config(format!("system.y0 has {} entries for {n} states", d.len())));
                }
                check_distribution("system.y0", d, 1e-10)?;
            }
            _ => {}
        }
        if !s.x0.is_finite() {
            return Err(Error::Config("system.x0 must be finite".into()));
        }
        if self.horizon.t > 100_000 {
            return Err(Error::Config(format!("horizon.T = {} is too large", self.horizon.t)));
        }
        if self.refine.factor == 0 || self.refine.factor > 64 {
            return Err(Error::Config(format!("refine.factor must be in 1..=64, got {}", self.refine.factor)));
        }
        let a = &self.adversary;
        if let Some(sd) = a.sigma_adv {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!("adversary.sigma_adv must be finite and > 0, got {sd}")));
            }
        }
        finite_nonneg("adversary.smoothing", a.smoothing)?;
        let t = &self.tradeoff;
        for (i, &l) in t.lambdas.iter().enumerate() {
            finite_nonneg(&format!("tradeoff.lambdas[{i}]"), l)?;
        }
        for (i, &v) in t.sigmas.iter().enumerate() {
            finite_nonneg(&format!("tradeoff.sigmas[{i}]"), v)?;
        }
        if t.eval_rollouts == 0 {
            return Err(Error::Config("tradeoff.eval_rollouts must be >= 1".into()));
        }
        if !(t.sigma_max > 0.0 && t.sigma_max.is_finite()) || !(t.match_tol > 0.0) {
            return Err(Error::Config("tradeoff.sigma_max and tradeoff.match_tol must be > 0".into()));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(m) if !m.starts_with("train.") => Error::Config(format!("train: {m}")),
            other => other,
        })?;
        self.model().map(|_| ())
    }

    pub fn quantizer(&self) -> Result<Quantizer> {
        let q = &self.quantizer;
        Quantizer::new(q.delta, q.z_min, q.z_max).map_err(|e| Error::Config(format!("quantizer: {e}")))
    }

    pub fn tessellation(&self) -> Result<Tessellation> {
        let t = &self.tessellation;
        Tessellation::new(t.delta_x, t.x_min, t.x_max).map_err(|e| Error::Config(format!("tessellation: {e}")))
    }

    /// The surrogate's state grid.
    pub fn state_grid(&self) -> Result<Tessellation> {
        self.tessellation()?.refined(self.refine.factor)
    }

    pub fn model(&self) -> Result<SystemModel> {
        let s = &self.system;
        let chain = match &s.y0 {
            None => PrivateChain::with_stationary_start(s.y_states.clone(), s.transition.clone())?,
            Some(InitialPrivate::Distribution(d)) => PrivateChain::new(s.y_states.clone(), s.transition.clone(), d.clone())?,
            Some(InitialPrivate::Label(l)) => {
                let init = s.y_states.iter().map(|v| f64::from(u8::from(v == l))).collect();
                PrivateChain::new(s.y_states.clone(), s.transition.clone(), init)?
            }
        };
        Ok(SystemModel {
            chain,
            dynamics: LinGaussDynamics::new(s.a, s.b, s.sigma_w).map_err(|e| Error::Config(format!("system: {e}")))?,
            measurement: MeasurementModel::new(s.c, s.sigma_v).map_err(|e| Error::Config(format!("system: {e}")))?,
            quantizer: self.quantizer()?,
            tessellation: self.tessellation()?,
            x0: s.x0,
        })
    }

    pub fn discretize(&self) -> Result<Discretization> {
        discretize(&self.model()?, &self.state_grid()?)
    }

    pub fn distortion(&self) -> Result<Distortion> {
        Ok(Distortion::new(self.train.loss, &self.tessellation()?))
    }

    /// Adversary std on raw values: `sigma_adv` or `sqrt(sigma_v^2 + delta^2/12)`.
    pub fn sigma_adv(&self) -> f64 {
        self.adversary.sigma_adv.unwrap_or_else(|| {
            (self.system.sigma_v.powi(2) + self.quantizer.delta.powi(2) / 12.0).sqrt()
        })
    }

    /// Training settings with the master seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}
