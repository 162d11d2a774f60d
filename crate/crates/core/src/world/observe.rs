use super::geometry::Vec2;
use super::{LaneId, Vehicle, VehicleId, World};
use crate::dynamics::{slip_angle, DynamicsConfig};
use crate::perturb::PerturbationSchedule;
use serde::{Deserialize, Serialize};

/// What one agent knows about one vehicle.
///
/// `l` and `v` are expressed in the observed vehicle's travel-aligned frame
/// (x along its heading). Heading and footprint ride along as unperturbed
/// pose metadata so positions can be mapped back to the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub target_id: VehicleId,
    pub l: [f64; 2],
    pub v: [f64; 2],
    /// Acceleration, connected targets only.
    pub alpha: Option<f64>,
    /// Lane detection, connected targets only.
    pub lane_detect: Option<LaneId>,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Observation {
    /// World-frame position implied by the (possibly perturbed) `l`.
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.l[0], self.l[1]).from_frame(self.heading)
    }

    /// Speed along the travel axis.
    pub fn speed(&self) -> f64 {
        self.v[0]
    }

    /// Shift the travel-axis components only.
    pub fn perturbed(&self, e_l: f64, e_v: f64) -> Observation {
        let mut o = *self;
        o.l[0] += e_l;
        o.v[0] += e_v;
        o
    }
}

/// Exact observation of `veh`.
pub fn observe(veh: &Vehicle, dyn_cfg: &DynamicsConfig) -> Observation {
    let s = &veh.state;
    let l = s.position().to_frame(s.psi);
    let beta = if veh.frozen { 0.0 } else { slip_angle(veh.control.steer, dyn_cfg) };
    let (sb, cb) = beta.sin_cos();
    Observation {
        target_id: s.id,
        l: [l.x, l.y],
        v: [s.v * cb, s.v * sb],
        alpha: s.connected.then_some(veh.control.accel),
        lane_detect: s.connected.then_some(veh.lane),
        heading: s.psi,
        length: s.length,
        width: s.width,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent: VehicleId,
    /// Self observation, always exact.
    pub own: Observation,
    /// Connected neighbors in range, nearest first.
    pub neighbors: Vec<Observation>,
    /// Unconnected vehicles in range, nearest first.
    pub ucvs: Vec<Observation>,
}

impl AgentState {
    pub fn others(&self) -> impl Iterator<Item = &Observation> {
        self.neighbors.iter().chain(self.ucvs.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedPerturbation {
    pub observer: VehicleId,
    pub target: VehicleId,
    pub e_l: f64,
    pub e_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub t: usize,
    pub agents: Vec<AgentState>,
    /// Every non-zero error applied this step.
    pub perturbations: Vec<AppliedPerturbation>,
    /// Errors whose 2-norm exceeded the schedule's bound.
    pub bound_violations: usize,
}

impl JointState {
    pub fn agent(&self, id: VehicleId) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.agent == id)
    }
}

/// Assemble every agent's local state: exact self observation plus possibly
/// perturbed observations of all other vehicles within `comm_range`.
pub fn build_joint_state(
    world: &World,
    comm_range: f64,
    schedule: &PerturbationSchedule,
    dyn_cfg: &DynamicsConfig,
) -> JointState {
    let exact: Vec<Observation> = world.vehicles.iter().map(|v| observe(v, dyn_cfg)).collect();
    let mut perturbations = Vec::new();
    let mut bound_violations = 0;
    let mut agents = Vec::new();
    for (i, me) in world.vehicles.iter().enumerate() {
        if !me.state.connected {
            continue;
        }
        let origin = me.state.position();
        let mut neighbors = Vec::new();
        let mut ucvs = Vec::new();
        for (j, other) in world.vehicles.iter().enumerate() {
            if i == j || (other.state.position() - origin).norm() > comm_range {
                continue;
            }
            let (e_l, e_v) = schedule.error(world.t, me.state.id, other.state.id);
            let obs = if e_l == 0.0 && e_v == 0.0 {
                exact[j]
            } else {
                perturbations.push(AppliedPerturbation {
                    observer: me.state.id,
                    target: other.state.id,
                    e_l,
                    e_v,
                });
                if !schedule.within_bound(e_l, e_v) {
                    bound_violations += 1;
                }
                exact[j].perturbed(e_l, e_v)
            };
            if other.state.connected {
                neighbors.push(obs);
            } else {
                ucvs.push(obs);
            }
        }
        let by_distance = |a: &Observation, b: &Observation| {
            let da = (a.position() - origin).norm();
            let db = (b.position() - origin).norm();
            da.total_cmp(&db).then(a.target_id.cmp(&b.target_id))
        };
        neighbors.sort_by(by_distance);
        ucvs.sort_by(by_distance);
        agents.push(AgentState {
            agent: me.state.id,
            own: exact[i],
            neighbors,
            ucvs,
        });
    }
    JointState {
        t: world.t,
        agents,
        perturbations,
        bound_violations,
    }
}
