//! Privacy-aware state estimation for Markov-modulated dynamical systems.
//!
//! The crate is split along the lines of the estimator design problem:
//!
//! - [`model`]: the private Markov chain, conditional-linear-Gaussian dynamics,
//!   quantized measurements and closed-loop trajectory sampling.
//! - [`finite`]: a fully finite surrogate of the system on which belief states,
//!   mutual information, information loss and the Bellman recursion are
//!   computed exactly by enumeration.
//! - [`policy`]: stochastic estimation policies over tessellation cells.
//! - [`infoloss`]: variational critics approximating the information loss.
//! - [`trainer`]: the policy-gradient trainer with the information-loss approximator.
//! - [`adversary`]: maximum-likelihood (Viterbi) inference of the private path.
//! - [`baseline`]: grid MMSE estimation and the additive-noise mechanism.
//! - [`config`] and [`experiment`]: TOML configuration and the experiment drivers
//!   behind the `privest` command line tool.

pub mod adversary;
pub mod baseline;
pub mod config;
pub mod error;
pub mod experiment;
pub mod finite;
pub mod infoloss;
pub mod loss;
pub mod model;
pub mod numeric;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
