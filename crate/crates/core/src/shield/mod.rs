//! Control-barrier safety shield.
//!
//! Every candidate action is turned into a nominal input and filtered through
//! a small QP whose rows keep the longitudinal barriers `h_f` (vehicles ahead)
//! and `h_l` (vehicles behind) from decaying faster than `-gamma * h`, with
//! an additive buffer that absorbs bounded observation error.

mod pseudo;

pub use pseudo::{pseudo_car_transform, PseudoCar};

use crate::dynamics::{emergency_control, nominal_control, Action, ControlInput, DynamicsConfig, LaneContext};
use crate::qp::{self, Constraint, QpProblem, QpSolution};
use crate::world::{wrap_angle, AgentState, JointState, LaneId, Observation, Path, RoadMap, VehicleId, VehicleState};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Slack below which a QP row counts as binding.
const BINDING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldConfig {
    /// Reaction-delay coefficient (s).
    pub c1: f64,
    pub c2: f64,
    /// Standstill margin (m).
    pub c3: f64,
    /// Linear class-K gain (1/s).
    pub gamma_cbf: f64,
    /// Assumed 2-norm bound on observation error (m).
    pub epsilon: f64,
    /// Lipschitz constant of the constraint left side in the observed state.
    /// `None` means estimate it by sampling when the shield is built.
    pub lipschitz_sum: Option<f64>,
    /// Range for crossing-vehicle pseudo cars (m).
    pub horizon: f64,
    /// Extra lateral gate for same-lane membership around the ego offset (m).
    pub lateral_gate: f64,
    /// Minimum heading cosine for a target to count as travelling along a lane.
    pub alignment_cos: f64,
    /// Braking capability assumed for other vehicles; `None` uses the ego's.
    pub target_decel: Option<f64>,
    /// Magnitude of the safety reward charged per emergency-stop step.
    pub emergency_penalty: f64,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            c3: 2.0,
            gamma_cbf: 1.0,
            epsilon: 2.0,
            lipschitz_sum: None,
            horizon: 60.0,
            lateral_gate: 2.5,
            alignment_cos: 0.7,
            target_decel: None,
            emergency_penalty: 10.0,
        }
    }
}

impl ShieldConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("gamma_cbf", self.gamma_cbf),
            ("epsilon", self.epsilon),
            ("lipschitz_sum", self.lipschitz_sum.unwrap_or(0.0)),
            ("horizon", self.horizon),
            ("lateral_gate", self.lateral_gate),
            ("emergency_penalty", self.emergency_penalty),
        ];
        for (name, x) in named {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidConfig(format!("shield.{name} must be finite and >= 0, got {x}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.alignment_cos) {
            return Err(Error::InvalidConfig("shield.alignment_cos must lie in [-1, 1]".into()));
        }
        if let Some(a) = self.target_decel {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidConfig("shield.target_decel must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Distance parameters with the braking capabilities resolved.
    pub fn distances(&self, dyn_cfg: &DynamicsConfig) -> DistanceParams {
        let ego = dyn_cfg.max_decel();
        DistanceParams {
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            ego_decel: ego,
            target_decel: self.target_decel.unwrap_or(ego),
        }
    }
}

/// Coefficients of the following/leading distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Ego braking magnitude (m/s^2).
    pub ego_decel: f64,
    /// Other vehicles' braking magnitude (m/s^2).
    pub target_decel: f64,
}

/// Distance the ego must keep behind a leader moving at `v_f`.
pub fn safety_distance_follow(v: f64, v_f: f64, p: &DistanceParams) -> f64 {
    p.c1 * v + p.c2 * (v * v / (2.0 * p.ego_decel) - v_f * v_f / (2.0 * p.target_decel)) + p.c3
}

/// Distance a follower at `v_r` must keep behind the ego.
pub fn safety_distance_lead(v: f64, v_r: f64, p: &DistanceParams) -> f64 {
    p.c1 * v_r + p.c2 * (v_r * v_r / (2.0 * p.target_decel) - v * v / (2.0 * p.ego_decel)) + p.c3
}

/// Buffer added to every barrier row.
pub fn robust_buffer(lipschitz_sum: f64, epsilon: f64) -> f64 {
    lipschitz_sum * epsilon
}

/// Discretization allowance: with explicit Euler the quadratic braking term
/// of `h_f` loses at most `c2 * a^2 * dt / (2 A)` per unit time.
pub fn sampling_margin(p: &DistanceParams, dyn_cfg: &DynamicsConfig) -> f64 {
    let a = dyn_cfg.accel_min.abs().max(dyn_cfg.accel_max.abs());
    p.c2 * a * a * dyn_cfg.dt / (2.0 * p.ego_decel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Front,
    Rear,
}

/// Ego kinematics along the path a constraint set is built on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ego {
    pub s: f64,
    /// Signed lateral offset from the path.
    pub d: f64,
    pub v: f64,
    pub length: f64,
    pub width: f64,
}

/// Another vehicle reduced to the ego path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalTarget {
    pub source: VehicleId,
    pub role: Role,
    pub s: f64,
    pub v: f64,
    pub length: f64,
    pub pseudo: bool,
}

impl LongitudinalTarget {
    pub fn from_pseudo(p: &PseudoCar, ego_s: f64) -> Self {
        Self {
            source: p.source_id,
            role: if p.s >= ego_s { Role::Front } else { Role::Rear },
            s: p.s,
            v: p.v,
            length: p.length,
            pseudo: true,
        }
    }

    /// Bumper-to-bumper gap.
    pub fn gap(&self, ego: &Ego) -> f64 {
        (self.s - ego.s).abs() - (self.length + ego.length) / 2.0
    }
}

/// Barrier value of each target; positive inside the safe set.
pub fn barrier_values(ego: &Ego, targets: &[LongitudinalTarget], p: &DistanceParams) -> Vec<f64> {
    targets.iter().map(|t| barrier(ego, t, p)).collect()
}

fn barrier(ego: &Ego, t: &LongitudinalTarget, p: &DistanceParams) -> f64 {
    let gap = t.gap(ego);
    match t.role {
        Role::Front => gap - safety_distance_follow(ego.v, t.v, p),
        Role::Rear => gap - safety_distance_lead(ego.v, t.v, p),
    }
}

/// Row `a . u >= b` enforcing `dh/dt >= -gamma h + buffer (+ margin)`.
///
/// Only the acceleration column is populated: the barriers are longitudinal
/// and steering enters through the nominal trajectory alone.
pub fn barrier_row(
    ego: &Ego,
    t: &LongitudinalTarget,
    p: &DistanceParams,
    gamma: f64,
    buffer: f64,
    margin: f64,
) -> (f64, Constraint) {
    let h = barrier(ego, t, p);
    let lg = p.c2 * ego.v / p.ego_decel;
    let c = match t.role {
        Role::Front => Constraint {
            a: [-(p.c1 + lg), 0.0],
            b: -gamma * h + buffer + margin - (t.v - ego.v),
        },
        Role::Rear => Constraint {
            a: [lg, 0.0],
            b: -gamma * h + buffer - (ego.v - t.v),
        },
    };
    (h, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSampling {
    pub samples: usize,
    pub gap_max: f64,
    pub speed_max: f64,
    pub safety_factor: f64,
    pub seed: u64,
}

impl Default for LipschitzSampling {
    fn default() -> Self {
        Self {
            samples: 10_000,
            gap_max: 100.0,
            speed_max: 15.0,
            safety_factor: 1.5,
            seed: 0x5eed_1195,
        }
    }
}

/// Empirical Lipschitz bound of the constraint left side plus `gamma h`
/// with respect to the perturbable (position, speed) pair of a target.
///
/// Pairs of states `epsilon` apart (or unit distance when `epsilon` is zero)
/// are sampled over the operating envelope and the largest ratio is inflated
/// by the safety factor.
pub fn estimate_lipschitz_sum(cfg: &ShieldConfig, dyn_cfg: &DynamicsConfig, sampling: &LipschitzSampling) -> f64 {
    let p = cfg.distances(dyn_cfg);
    let radius = if cfg.epsilon > 0.0 { cfg.epsilon } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut worst: f64 = 0.0;
    for i in 0..sampling.samples {
        let role = if i % 2 == 0 { Role::Front } else { Role::Rear };
        let ego = Ego {
            s: 0.0,
            d: 0.0,
            v: rng.random_range(0.0..=sampling.speed_max),
            length: crate::world::DEFAULT_LENGTH,
            width: crate::world::DEFAULT_WIDTH,
        };
        let gap = rng.random_range(0.0..=sampling.gap_max);
        let offset = gap + ego.length;
        let t = LongitudinalTarget {
            source: VehicleId(0),
            role,
            s: if role == Role::Front { offset } else { -offset },
            v: rng.random_range(0.0..=sampling.speed_max),
            length: ego.length,
            pseudo: false,
        };
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let r = radius * rng.random_range(0.0f64..=1.0).sqrt().max(1e-3);
        let (e_l, e_v) = (r * theta.cos(), r * theta.sin());
        let mut moved = t;
        moved.s += e_l;
        moved.v = (moved.v + e_v).max(0.0);
        let accel = rng.random_range(dyn_cfg.accel_min..=dyn_cfg.accel_max);
        // With no buffer, `a . u - b` is the constraint left side plus gamma h.
        let lhs = |x: &LongitudinalTarget| {
            let (_, c) = barrier_row(&ego, x, &p, cfg.gamma_cbf, 0.0, 0.0);
            c.a[0] * accel - c.b
        };
        let ratio = (lhs(&moved) - lhs(&t)).abs() / r;
        worst = worst.max(ratio);
    }
    worst * sampling.safety_factor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShieldMode {
    /// Buffer sized by the configured epsilon.
    Robust,
    /// Same constraints with the buffer switched off.
    Plain,
    /// Every action passes with its nominal input.
    Off,
}

/// Everything the per-action check needs, with derived constants resolved once.
#[derive(Debug, Clone)]
pub struct Shield<'a> {
    pub map: &'a RoadMap,
    pub cfg: ShieldConfig,
    pub dynamics: DynamicsConfig,
    pub mode: ShieldMode,
    pub params: DistanceParams,
    pub lipschitz_sum: f64,
    pub buffer: f64,
    pub margin: f64,
}

impl<'a> Shield<'a> {
    pub fn new(map: &'a RoadMap, cfg: ShieldConfig, dynamics: DynamicsConfig, mode: ShieldMode) -> Result<Self> {
        map.validate()?;
        cfg.validate()?;
        dynamics.validate()?;
        let params = cfg.distances(&dynamics);
        let lipschitz_sum = cfg
            .lipschitz_sum
            .unwrap_or_else(|| estimate_lipschitz_sum(&cfg, &dynamics, &LipschitzSampling::default()));
        let buffer = match mode {
            ShieldMode::Robust => robust_buffer(lipschitz_sum, cfg.epsilon),
            ShieldMode::Plain | ShieldMode::Off => 0.0,
        };
        let margin = sampling_margin(&params, &dynamics);
        Ok(Self {
            map,
            cfg,
            dynamics,
            mode,
            params,
            lipschitz_sum,
            buffer,
            margin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindingConstraint {
    pub source: VehicleId,
    pub role: Role,
    pub pseudo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsafeReason {
    NoAdjacentLane,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Safe {
        /// Filtered input to execute.
        u: ControlInput,
        nominal: ControlInput,
        binding: Option<BindingConstraint>,
    },
    Unsafe {
        reason: UnsafeReason,
    },
}

impl Verdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::Safe { .. })
    }

    pub fn input(&self) -> Option<ControlInput> {
        match self {
            Verdict::Safe { u, .. } => Some(*u),
            Verdict::Unsafe { .. } => None,
        }
    }
}

fn ego_vehicle(own: &Observation) -> VehicleState {
    let p = own.position();
    let mut s = VehicleState::new(own.target_id, p.x, p.y, own.v[0].hypot(own.v[1]), own.heading, true);
    s.length = own.length;
    s.width = own.width;
    s
}

fn ego_on(path: &Path, state: &VehicleState) -> Ego {
    let proj = path.project_point(state.position());
    Ego {
        s: proj.s,
        d: proj.d,
        v: state.v,
        length: state.length,
        width: state.width,
    }
}

/// Aligned vehicles treated as occupying `path` near the ego.
fn lane_targets(
    path: &Path,
    lane_width: f64,
    ego: &Ego,
    others: &[&Observation],
    cfg: &ShieldConfig,
    near_ego: bool,
) -> Vec<LongitudinalTarget> {
    let mut out = Vec::new();
    for o in others {
        let proj = path.project_point(o.position());
        let align = wrap_angle(o.heading - proj.heading).cos();
        if align < cfg.alignment_cos {
            continue;
        }
        let in_lane = proj.d.abs() < lane_width / 2.0 || (near_ego && (proj.d - ego.d).abs() < cfg.lateral_gate);
        if !in_lane {
            continue;
        }
        out.push(LongitudinalTarget {
            source: o.target_id,
            role: if proj.s >= ego.s { Role::Front } else { Role::Rear },
            s: proj.s,
            v: o.speed() * align,
            length: o.length,
            pseudo: false,
        });
    }
    out
}

/// Pseudo cars for vehicles crossing `path`.
fn crossing_targets(path: &Path, ego: &Ego, others: &[&Observation], cfg: &ShieldConfig) -> Vec<LongitudinalTarget> {
    others
        .iter()
        .filter(|o| {
            let proj = path.project_point(o.position());
            wrap_angle(o.heading - proj.heading).cos() < cfg.alignment_cos
        })
        .filter_map(|o| pseudo_car_transform(path, ego, o, cfg.horizon))
        .map(|p| LongitudinalTarget::from_pseudo(&p, ego.s))
        .collect()
}

/// Longitudinal constraint set for `action`, paired with the ego reduction
/// each target was measured against.
///
/// Every action sees the current-lane leaders and all pseudo cars. Lane
/// changes add the current-lane followers and both roles on the target lane.
pub fn constraint_targets(agent: &AgentState, action: Action, shield: &Shield<'_>) -> Result<Vec<(Ego, LongitudinalTarget)>> {
    let lane_id = agent
        .own
        .lane_detect
        .ok_or(Error::InvalidPath(format!("agent {} has no lane", agent.agent)))?;
    let lane = shield.map.lane(lane_id)?;
    let ctx = LaneContext::from_map(shield.map, lane_id)?;
    let state = ego_vehicle(&agent.own);
    let others: Vec<&Observation> = agent.others().collect();
    let ego = ego_on(&lane.path, &state);
    let changing = matches!(action, Action::ChangeLeft | Action::ChangeRight);
    // A real follower only matters when merging. Staying in lane, the ego has
    // no authority over it once stopped, and guarding it would deadlock.
    let mut out: Vec<(Ego, LongitudinalTarget)> = lane_targets(&lane.path, lane.width, &ego, &others, &shield.cfg, true)
        .into_iter()
        .filter(|t| changing || t.role == Role::Front)
        .chain(crossing_targets(&lane.path, &ego, &others, &shield.cfg))
        .map(|t| (ego, t))
        .collect();
    if changing {
        let target_path = ctx.target(action)?;
        let width = shield.map.lane(target_path.lane_id())?.width;
        let ego_t = ego_on(target_path, &state);
        out.extend(
            lane_targets(target_path, width, &ego_t, &others, &shield.cfg, false)
                .into_iter()
                .map(|t| (ego_t, t)),
        );
    }
    Ok(out)
}

/// Lowest acceleration the filter may command while still executing `action`.
///
/// Throttle intervals never brake, lane keeping and lane changes may brake
/// up to the BRAKE command, and BRAKE has the full range.
pub fn accel_floor(action: Action, dyn_cfg: &DynamicsConfig) -> f64 {
    match action {
        Action::Brake | Action::EmergencyStop => dyn_cfg.accel_min,
        Action::KeepLane | Action::ChangeLeft | Action::ChangeRight => dyn_cfg.brake_value * dyn_cfg.accel_min,
        Action::Throttle(j) => (j as f64 - 1.0) / dyn_cfg.throttle_intervals as f64 * dyn_cfg.accel_max,
    }
}

/// Filter the nominal input of `action` through the barrier QP.
pub fn check_action_safe(agent: &AgentState, action: Action, shield: &Shield<'_>) -> Result<Verdict> {
    let dyn_cfg = &shield.dynamics;
    let lane_id = agent
        .own
        .lane_detect
        .ok_or(Error::InvalidPath(format!("agent {} has no lane", agent.agent)))?;
    let ctx = LaneContext::from_map(shield.map, lane_id)?;
    let state = ego_vehicle(&agent.own);
    let nominal = match nominal_control(&state, action, &ctx, dyn_cfg) {
        Ok(u) => u,
        Err(Error::NoAdjacentLane { .. }) => {
            return Ok(Verdict::Unsafe {
                reason: UnsafeReason::NoAdjacentLane,
            })
        }
        Err(e) => return Err(e),
    };
    if shield.mode == ShieldMode::Off {
        return Ok(Verdict::Safe {
            u: nominal,
            nominal,
            binding: None,
        });
    }
    let targets = constraint_targets(agent, action, shield)?;
    // Speed saturates at zero, so braking harder than one step can realize
    // earns no barrier credit.
    let realizable = -state.v.max(0.0) / dyn_cfg.dt;
    let floor = accel_floor(action, dyn_cfg).min(nominal.accel).max(realizable);
    let mut problem = QpProblem::new(
        [nominal.accel, nominal.steer],
        [[floor, dyn_cfg.accel_max], [dyn_cfg.steer_min, dyn_cfg.steer_max]],
    );
    for (ego, t) in &targets {
        let (_, row) = barrier_row(ego, t, &shield.params, shield.cfg.gamma_cbf, shield.buffer, shield.margin);
        problem = problem.with_constraint(row.a, row.b);
    }
    match qp::solve(&problem)? {
        QpSolution::Infeasible => Ok(Verdict::Unsafe {
            reason: UnsafeReason::Infeasible,
        }),
        QpSolution::Feasible { u, .. } => {
            let binding = problem
                .constraints
                .iter()
                .zip(&targets)
                .map(|(c, (_, t))| (c.slack(u), t))
                .filter(|(slack, _)| *slack <= BINDING_TOL)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, t)| BindingConstraint {
                    source: t.source,
                    role: t.role,
                    pseudo: t.pseudo,
                });
            Ok(Verdict::Safe {
                u: ControlInput::new(u[0], u[1]),
                nominal,
                binding,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVerdict {
    pub action: Action,
    #[serde(flatten)]
    pub verdict: Verdict,
}

/// Shield decisions for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: VehicleId,
    pub lane: LaneId,
    pub verdicts: Vec<ActionVerdict>,
    pub emergency: bool,
    pub safety_reward: f64,
}

impl AgentOutcome {
    /// Executable actions: the safe ones, or the emergency stop alone.
    pub fn safe_set(&self) -> Vec<Action> {
        if self.emergency {
            return vec![Action::EmergencyStop];
        }
        self.verdicts
            .iter()
            .filter(|v| v.verdict.is_safe())
            .map(|v| v.action)
            .collect()
    }

    /// Input to execute for `action`, if it is in the safe set.
    pub fn control_for(&self, action: Action, dyn_cfg: &DynamicsConfig) -> Option<ControlInput> {
        if action == Action::EmergencyStop {
            return self.emergency.then(|| emergency_control(dyn_cfg));
        }
        self.verdicts
            .iter()
            .find(|v| v.action == action)
            .and_then(|v| v.verdict.input())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyOutcome {
    pub agents: Vec<AgentOutcome>,
}

impl SafetyOutcome {
    pub fn agent(&self, id: VehicleId) -> Option<&AgentOutcome> {
        self.agents.iter().find(|a| a.agent == id)
    }
}

/// Run every action of every agent through the shield.
pub fn safety_shield(joint: &JointState, shield: &Shield<'_>) -> Result<SafetyOutcome> {
    let space = shield.dynamics.action_space();
    let mut agents = Vec::with_capacity(joint.agents.len());
    for agent in &joint.agents {
        let lane = agent
            .own
            .lane_detect
            .ok_or(Error::InvalidPath(format!("agent {} has no lane", agent.agent)))?;
        let verdicts = space
            .actions()
            .map(|action| {
                check_action_safe(agent, action, shield).map(|verdict| ActionVerdict { action, verdict })
            })
            .collect::<Result<Vec<_>>>()?;
        let emergency = !verdicts.iter().any(|v| v.verdict.is_safe());
        agents.push(AgentOutcome {
            agent: agent.agent,
            lane,
            verdicts,
            emergency,
            safety_reward: if emergency { -shield.cfg.emergency_penalty } else { 0.0 },
        });
    }
    Ok(SafetyOutcome { agents })
}

#[cfg(test)]
mod tests;
