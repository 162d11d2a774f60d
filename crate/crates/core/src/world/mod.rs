//! Ground-truth world model: vehicle geometry, lane paths, collisions and
//! the agent-local observations built on top of them.

mod collision;
mod geometry;
mod observe;
mod path;

pub use collision::{detect_collisions, footprint_corners, rectangles_overlap, CollisionPair};
pub use geometry::{wrap_angle, Vec2};
pub use observe::{build_joint_state, observe, AgentState, AppliedPerturbation, JointState, Observation};
pub use path::{Path, Projection, SignalPhase, CORRIDOR_RADIUS};

use crate::dynamics::{step_bicycle, ControlInput, DynamicsConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default sedan footprint.
pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 2.0;
/// Default V2X communication range.
pub const DEFAULT_COMM_RANGE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lane{}", self.0)
    }
}

/// Pose and speed of one vehicle's center of gravity in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub psi: f64,
    pub length: f64,
    pub width: f64,
    pub connected: bool,
}

impl VehicleState {
    pub fn new(id: VehicleId, x: f64, y: f64, v: f64, psi: f64, connected: bool) -> Self {
        Self {
            id,
            x,
            y,
            v,
            psi,
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
            connected,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.psi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub path: Path,
    #[serde(default = "default_lane_width")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<LaneId>,
}

fn default_lane_width() -> f64 {
    3.5
}

impl Lane {
    pub fn id(&self) -> LaneId {
        self.path.lane_id()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadMap {
    pub lanes: Vec<Lane>,
}

impl RoadMap {
    pub fn lane(&self, id: LaneId) -> Result<&Lane> {
        self.lanes
            .iter()
            .find(|l| l.id() == id)
            .ok_or(Error::UnknownLane(id))
    }

    pub fn lane_index(&self, id: LaneId) -> Option<usize> {
        self.lanes.iter().position(|l| l.id() == id)
    }

    /// Check neighbor references and lane widths.
    pub fn validate(&self) -> Result<()> {
        for lane in &self.lanes {
            if !(lane.width.is_finite() && lane.width > 0.0) {
                return Err(Error::InvalidConfig(format!("{} has an invalid width", lane.id())));
            }
            for n in lane.left.iter().chain(lane.right.iter()) {
                self.lane(*n)?;
            }
        }
        let mut ids: Vec<_> = self.lanes.iter().map(Lane::id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.lanes.len() {
            return Err(Error::InvalidConfig("duplicate lane ids".into()));
        }
        Ok(())
    }

    /// Lane whose centerline is laterally closest to `p` among lanes whose
    /// direction agrees with `heading` (cosine above 0.5).
    pub fn nearest_lane(&self, p: Vec2, heading: f64) -> Option<LaneId> {
        self.lanes
            .iter()
            .filter_map(|l| {
                let proj = l.path.project_point(p);
                (wrap_angle(heading - proj.heading).cos() > 0.5).then_some((proj.d.abs(), l.id()))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }
}

/// One simulated vehicle with the bookkeeping the world needs beyond its
/// kinematic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub state: VehicleState,
    /// Reference lane (lane detection result for connected vehicles).
    pub lane: LaneId,
    /// Last applied control input.
    pub control: ControlInput,
    /// Collided vehicles stay in place as obstacles.
    pub frozen: bool,
}

impl Vehicle {
    pub fn new(state: VehicleState, lane: LaneId) -> Self {
        Self {
            state,
            lane,
            control: ControlInput::ZERO,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub map: RoadMap,
    pub vehicles: Vec<Vehicle>,
    pub t: usize,
}

impl World {
    pub fn new(map: RoadMap, vehicles: Vec<Vehicle>) -> Self {
        Self { map, vehicles, t: 0 }
    }

    pub fn states(&self) -> Vec<VehicleState> {
        self.vehicles.iter().map(|v| v.state).collect()
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&Vehicle> {
        self.vehicles
            .iter()
            .find(|v| v.state.id == id)
            .ok_or(Error::UnknownVehicle(id))
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.iter().position(|v| v.state.id == id)
    }

    /// Agents are the connected vehicles, in spawn order.
    pub fn agent_ids(&self) -> Vec<VehicleId> {
        self.vehicles
            .iter()
            .filter(|v| v.state.connected)
            .map(|v| v.state.id)
            .collect()
    }

    /// Advance every non-frozen vehicle by one step. `controls` is indexed
    /// like `vehicles`. Connected vehicles re-detect their lane afterwards.
    pub fn step(&mut self, controls: &[ControlInput], dyn_cfg: &DynamicsConfig) {
        assert_eq!(controls.len(), self.vehicles.len());
        for (veh, u) in self.vehicles.iter_mut().zip(controls) {
            if veh.frozen {
                veh.control = ControlInput::ZERO;
                continue;
            }
            veh.control = *u;
            veh.state = step_bicycle(&veh.state, u, dyn_cfg.dt, dyn_cfg);
            if veh.state.connected {
                veh.lane = self
                    .map
                    .nearest_lane(veh.state.position(), veh.state.psi)
                    .unwrap_or(veh.lane);
            }
        }
        self.t += 1;
    }
}
