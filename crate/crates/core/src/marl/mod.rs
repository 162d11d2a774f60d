//! Multi-agent policy optimization with worst-case critics and state
//! regularization.

pub mod features;
pub mod losses;
pub mod nn;

pub use features::{adversarial_candidates, encode, FEATURE_DIM};
pub use losses::{
    compute_returns_advantages, greedy_action, policy_forward, rcs_loss, reg_loss, robust_advantage, select_action,
    value_loss, worst_q_loss,
};
pub use nn::{Adam, Mlp, OutputInit};
pub mod learner;

pub use learner::{AgentLearner, Algo, LossReport, MarlConfig, ParameterSet, Step, Trajectory};
