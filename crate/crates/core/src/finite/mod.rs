//! Exact oracles on a fully finite surrogate of the system.
//!
//! The surrogate replaces the integrals over the state by sums over a grid of
//! state cells, so belief states, mutual information, information loss and
//! the Bellman recursion can be evaluated exactly by enumeration on small
//! instances.

mod belief;
mod dp;
mod joint;
mod objective;
mod system;

use serde::{Deserialize, Serialize};

pub use belief::{
    adversary_posterior, belief_along, belief_init, belief_update, collection_for, direct_info_loss,
    stage_cost, stage_cost_parts, BeliefEntry, BeliefState, HistoryKey, PolicyCollection, StageCost,
};
pub use dp::{
    bellman_value, dp_solve, DpConfig, DpResult, NodeBelief, NodeDecision, PolicyNode, PolicyTree,
    SoftmaxTree,
};
pub use joint::{
    enumerate, exact_joint, exact_mi, mi_chain, Enumeration, JointDistribution, MAX_JOINT_PATHS,
};
pub use objective::{exact_objective, exact_objective_grad, ExactObjective};
pub use system::{discretize, Discretization, FiniteSystem};

/// Which private history conditions the per-step information terms:
/// `Past` uses `Y^{t-1}`, `Present` uses `Y^t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryVariant {
    #[default]
    Past,
    Present,
}
