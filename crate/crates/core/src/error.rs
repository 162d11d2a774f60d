use crate::world::{LaneId, VehicleId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is {distance:.3} m from lane {lane}, outside the {radius} m projection corridor")]
    OutOfCorridor {
        lane: LaneId,
        distance: f64,
        radius: f64,
    },

    #[error("lane {lane} has no adjacent lane on the {side} side")]
    NoAdjacentLane { lane: LaneId, side: &'static str },

    #[error("unknown lane {0}")]
    UnknownLane(LaneId),

    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid QP problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("safe action set is empty")]
    EmptySafeSet,

    #[error("degenerate batch: sample {index} has old-policy probability {prob:e}")]
    DegenerateBatch { index: usize, prob: f64 },

    #[error("non-finite {which} parameters for agent {agent} after episode {episode}")]
    NonFiniteParameters {
        episode: usize,
        agent: usize,
        which: &'static str,
    },

    #[error("checkpoint checksum mismatch (header {expected}, body {found})")]
    ChecksumMismatch { expected: String, found: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("evaluation needs at least one episode")]
    EmptyEvaluation,

    #[error("replay diverged at step {step} for vehicle {vehicle}: deviation {deviation:e}")]
    ReplayMismatch {
        step: usize,
        vehicle: VehicleId,
        deviation: f64,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
