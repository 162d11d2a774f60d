//! Scenarios, episode rollout, logging, training and evaluation.

pub mod checkpoint;
pub mod config;
pub mod episode;
pub mod eval;
pub mod reward;
pub mod scenario;
pub mod train;

pub use checkpoint::{Checkpoint, Layout};
pub use config::{make_schedule, Config, Mode, PtbName, ScenarioName};
pub use episode::{
    replay, run_episode, validate_log_line, Choice, ConstantPolicy, EpisodeLog, EpisodeOutput, EpisodeSetup,
    LearnedPolicy, Policy, ReplayReport,
};
pub use eval::{evaluate, evaluate_policy, EvalReport, ResultsTable, ScatterPoint, TABLE_PTBS};
pub use reward::{reward, SafetyEvents};
pub use scenario::{Scenario, ScenarioSpec, UcvPlan};
pub use train::{train, EpisodeMetrics, TrainSetup};
