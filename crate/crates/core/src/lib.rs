//! Desk-scale connected-vehicle driving simulator with a measurement-robust
//! control-barrier-function safety shield and a safe-robust multi-agent PPO
//! trainer.
//!
//! Module map:
//!
//! * [`world`]: vehicle geometry, lane paths, collision detection and the
//!   agent-local observations that make up a [`world::JointState`].
//! * [`dynamics`]: kinematic bicycle integration and the nominal controllers
//!   behind each discrete action.
//! * [`perturb`]: the bounded travel-axis observation errors used at test time.
//! * [`qp`]: the tiny dense projection QP used by the shield.
//! * [`shield`]: barrier functions, the robust buffer, pseudo cars and the
//!   per-action feasibility filter.
//! * [`marl`]: actor / value / worst-case Q approximators, losses and the
//!   shield-restricted training loop.
//! * [`harness`]: scenarios, rewards, episode orchestration, evaluation,
//!   checkpoints and logs.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod marl;
pub mod perturb;
pub mod qp;
pub mod shield;
pub mod world;

pub use error::{Error, Result};
