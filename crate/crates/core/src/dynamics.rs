//! Kinematic bicycle integration and the nominal controllers behind each
//! discrete action.

use crate::world::{wrap_angle, LaneId, Path, RoadMap, Vec2, VehicleState};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration at the center of gravity, m/s^2.
    pub accel: f64,
    /// Front steering angle, rad.
    pub steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { accel: 0.0, steer: 0.0 };

    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Integration step, s.
    pub dt: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub wheelbase: f64,
    /// Distance from the rear axle to the center of gravity.
    pub rear_to_cg: f64,
    /// Speed the throttle actions saturate at.
    pub v_max: f64,
    /// Gain of the throttle speed cap, 1/s.
    pub speed_gain: f64,
    /// Cross-track gain of the lane-keeping law, 1/s.
    pub lane_gain: f64,
    /// Look-ahead distance for lane-change pursuit, m.
    pub lookahead: f64,
    /// Brake command of the BRAKE action, fraction of maximum deceleration.
    pub brake_value: f64,
    /// Number of throttle intervals.
    pub throttle_intervals: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            accel_min: -6.0,
            accel_max: 4.0,
            steer_min: -0.5,
            steer_max: 0.5,
            wheelbase: 2.7,
            rear_to_cg: 1.35,
            v_max: 15.0,
            speed_gain: 1.0,
            lane_gain: 0.5,
            lookahead: 15.0,
            brake_value: 0.5,
            throttle_intervals: 3,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.dt,
            self.accel_min,
            self.accel_max,
            self.steer_min,
            self.steer_max,
            self.wheelbase,
            self.rear_to_cg,
            self.v_max,
            self.speed_gain,
            self.lane_gain,
            self.lookahead,
            self.brake_value,
        ]
        .iter()
        .all(|x| x.is_finite());
        let ok = finite
            && self.dt > 0.0
            && self.accel_min < 0.0
            && self.accel_max > 0.0
            && self.steer_min <= self.steer_max
            && self.wheelbase > 0.0
            && self.rear_to_cg > 0.0
            && self.rear_to_cg <= self.wheelbase
            && (0.0..=1.0).contains(&self.brake_value)
            && self.throttle_intervals >= 1
            && self.v_max > 0.0
            && self.speed_gain >= 0.0
            && self.lane_gain >= 0.0
            && self.lookahead > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("dynamics constants out of range".into()))
        }
    }

    /// Magnitude of the maximum deceleration.
    pub fn max_decel(&self) -> f64 {
        self.accel_min.abs()
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            accel: u.accel.clamp(self.accel_min, self.accel_max),
            steer: u.steer.clamp(self.steer_min, self.steer_max),
        }
    }

    pub fn admissible(&self, u: &ControlInput) -> bool {
        (self.accel_min..=self.accel_max).contains(&u.accel)
            && (self.steer_min..=self.steer_max).contains(&u.steer)
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(self.throttle_intervals)
    }
}

/// Slip angle of the velocity vector at the center of gravity.
pub fn slip_angle(steer: f64, cfg: &DynamicsConfig) -> f64 {
    (cfg.rear_to_cg / cfg.wheelbase * steer.tan()).atan()
}

/// One explicit Euler step of the kinematic bicycle model about the center
/// of gravity. Speed saturates at zero and the heading is wrapped.
pub fn step_bicycle(state: &VehicleState, u: &ControlInput, dt: f64, cfg: &DynamicsConfig) -> VehicleState {
    let beta = slip_angle(u.steer, cfg);
    let mut next = *state;
    next.x += state.v * (state.psi + beta).cos() * dt;
    next.y += state.v * (state.psi + beta).sin() * dt;
    next.psi = wrap_angle(state.psi + state.v / cfg.rear_to_cg * beta.sin() * dt);
    next.v = (state.v + u.accel * dt).max(0.0);
    next
}

/// Discrete action set: four maneuvers followed by `k` throttle intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    KeepLane,
    ChangeLeft,
    ChangeRight,
    Brake,
    /// Throttle interval `j` in `1..=k`, covering `[(j-1)/k, j/k]`.
    Throttle(u8),
    /// Fallback when nothing passes the shield; not part of the action space.
    EmergencyStop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::KeepLane => f.write_str("KEEP-LANE-SPEED"),
            Action::ChangeLeft => f.write_str("CHANGE-LANE-LEFT"),
            Action::ChangeRight => f.write_str("CHANGE-LANE-RIGHT"),
            Action::Brake => f.write_str("BRAKE"),
            Action::Throttle(j) => write!(f, "THROTTLE-{j}"),
            Action::EmergencyStop => f.write_str("EMERGENCY-STOP"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub k: usize,
}

impl ActionSpace {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn len(&self) -> usize {
        4 + self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Action at zero-based position `i`.
    pub fn action(&self, i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::KeepLane),
            1 => Some(Action::ChangeLeft),
            2 => Some(Action::ChangeRight),
            3 => Some(Action::Brake),
            i if i < self.len() => Some(Action::Throttle((i - 3) as u8)),
            _ => None,
        }
    }

    pub fn index(&self, a: Action) -> Option<usize> {
        match a {
            Action::KeepLane => Some(0),
            Action::ChangeLeft => Some(1),
            Action::ChangeRight => Some(2),
            Action::Brake => Some(3),
            Action::Throttle(j) if j >= 1 && (j as usize) <= self.k => Some(3 + j as usize),
            _ => None,
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        (0..self.len()).filter_map(|i| self.action(i))
    }
}

/// Lane centerlines available to the nominal controller.
#[derive(Debug, Clone, Copy)]
pub struct LaneContext<'a> {
    pub lane: LaneId,
    pub current: &'a Path,
    pub left: Option<&'a Path>,
    pub right: Option<&'a Path>,
}

impl<'a> LaneContext<'a> {
    pub fn from_map(map: &'a RoadMap, lane: LaneId) -> Result<Self> {
        let l = map.lane(lane)?;
        let side = |id: Option<LaneId>| -> Result<Option<&'a Path>> {
            id.map(|n| map.lane(n).map(|x| &x.path)).transpose()
        };
        Ok(Self {
            lane,
            current: &l.path,
            left: side(l.left)?,
            right: side(l.right)?,
        })
    }

    /// Path a lane-change action heads for.
    pub fn target(&self, action: Action) -> Result<&'a Path> {
        match action {
            Action::ChangeLeft => self.left.ok_or(Error::NoAdjacentLane {
                lane: self.lane,
                side: "left",
            }),
            Action::ChangeRight => self.right.ok_or(Error::NoAdjacentLane {
                lane: self.lane,
                side: "right",
            }),
            _ => Ok(self.current),
        }
    }
}

/// Heading-plus-cross-track lane keeping law.
fn lane_keep_steer(state: &VehicleState, path: &Path, cfg: &DynamicsConfig) -> f64 {
    let proj = path.project_point(state.position());
    let heading_err = path.heading_error(proj.s, state.psi);
    -heading_err - (cfg.lane_gain * proj.d / (state.v + 1.0)).atan()
}

/// Pure pursuit of the point `lookahead` meters ahead on `path`.
fn pursuit_steer(state: &VehicleState, path: &Path, cfg: &DynamicsConfig) -> f64 {
    let proj = path.project_point(state.position());
    let goal: Vec2 = path.point_at(proj.s + cfg.lookahead);
    let rel = (goal - state.position()).to_frame(state.psi);
    let dist = rel.norm().max(1e-6);
    let alpha = rel.y.atan2(rel.x);
    (2.0 * cfg.wheelbase * alpha.sin() / dist).atan()
}

/// Control input a nominal low-level controller produces for `action`.
pub fn nominal_control(
    state: &VehicleState,
    action: Action,
    ctx: &LaneContext<'_>,
    cfg: &DynamicsConfig,
) -> Result<ControlInput> {
    let u = match action {
        Action::KeepLane => ControlInput::new(0.0, lane_keep_steer(state, ctx.current, cfg)),
        Action::ChangeLeft | Action::ChangeRight => {
            let target = ctx.target(action)?;
            ControlInput::new(0.0, pursuit_steer(state, target, cfg))
        }
        Action::Brake => ControlInput::new(
            cfg.brake_value * cfg.accel_min,
            lane_keep_steer(state, ctx.current, cfg),
        ),
        Action::Throttle(j) => {
            let k = cfg.throttle_intervals as f64;
            let throttle = (j as f64 - 0.5) / k;
            let accel = (throttle * cfg.accel_max).min(cfg.speed_gain * (cfg.v_max - state.v));
            ControlInput::new(accel, lane_keep_steer(state, ctx.current, cfg))
        }
        Action::EmergencyStop => emergency_control(cfg),
    };
    Ok(cfg.clamp(u))
}

/// Maximal deceleration with the wheels straight.
pub fn emergency_control(cfg: &DynamicsConfig) -> ControlInput {
    ControlInput::new(cfg.accel_min, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Lane, VehicleId};

    fn car(x: f64, y: f64, v: f64, psi: f64) -> VehicleState {
        VehicleState::new(VehicleId(0), x, y, v, psi, true)
    }

    fn two_lane_map() -> RoadMap {
        let mk = |id: u32, y: f64, left: Option<u32>, right: Option<u32>| Lane {
            path: Path::straight(LaneId(id), Vec2::new(-100.0, y), Vec2::new(1000.0, y)).unwrap(),
            width: 3.5,
            left: left.map(LaneId),
            right: right.map(LaneId),
        };
        RoadMap {
            lanes: vec![mk(0, 0.0, Some(1), None), mk(1, 3.5, None, Some(0))],
        }
    }

    #[test]
    fn rest_point() {
        let cfg = DynamicsConfig::default();
        let s = car(3.0, -2.0, 0.0, 0.7);
        assert_eq!(step_bicycle(&s, &ControlInput::ZERO, 0.05, &cfg), s);
    }

    #[test]
    fn straight_line_step() {
        let cfg = DynamicsConfig::default();
        let s = step_bicycle(&car(0.0, 0.0, 10.0, 0.0), &ControlInput::ZERO, 0.1, &cfg);
        assert!((s.x - 1.0).abs() < 1e-12);
        assert_eq!((s.y, s.v, s.psi), (0.0, 10.0, 0.0));
        let s = step_bicycle(&car(0.0, 0.0, 10.0, 0.0), &ControlInput::new(2.0, 0.0), 0.1, &cfg);
        assert!((s.v - 10.2).abs() < 1e-12);
        assert!((s.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn braking_saturates_at_standstill() {
        let cfg = DynamicsConfig::default();
        let s = step_bicycle(&car(0.0, 0.0, 0.1, 0.0), &ControlInput::new(-6.0, 0.0), 0.05, &cfg);
        assert_eq!(s.v, 0.0);
    }

    #[test]
    fn action_indexing() {
        let space = ActionSpace::new(3);
        assert_eq!(space.len(), 7);
        for (i, a) in space.actions().enumerate() {
            assert_eq!(space.index(a), Some(i));
        }
        assert_eq!(space.action(4), Some(Action::Throttle(1)));
        assert_eq!(space.action(6), Some(Action::Throttle(3)));
        assert_eq!(space.index(Action::EmergencyStop), None);
        assert_eq!(space.index(Action::Throttle(4)), None);
    }

    #[test]
    fn keep_lane_fixed_point() {
        let map = two_lane_map();
        let ctx = LaneContext::from_map(&map, LaneId(0)).unwrap();
        let u = nominal_control(&car(10.0, 0.0, 10.0, 0.0), Action::KeepLane, &ctx, &DynamicsConfig::default()).unwrap();
        assert!(u.accel.abs() < 1e-12 && u.steer.abs() < 1e-12);
    }

    #[test]
    fn brake_is_half_max_decel() {
        let map = two_lane_map();
        let ctx = LaneContext::from_map(&map, LaneId(0)).unwrap();
        let u = nominal_control(&car(10.0, 0.0, 10.0, 0.0), Action::Brake, &ctx, &DynamicsConfig::default()).unwrap();
        assert_eq!(u.accel, -3.0);
    }

    #[test]
    fn no_lane_beyond_edge() {
        let map = two_lane_map();
        let ctx = LaneContext::from_map(&map, LaneId(1)).unwrap();
        let err = nominal_control(&car(10.0, 3.5, 10.0, 0.0), Action::ChangeLeft, &ctx, &DynamicsConfig::default());
        assert!(matches!(err, Err(Error::NoAdjacentLane { side: "left", .. })));
        let ctx0 = LaneContext::from_map(&map, LaneId(0)).unwrap();
        let u = nominal_control(&car(10.0, 0.0, 10.0, 0.0), Action::ChangeLeft, &ctx0, &DynamicsConfig::default()).unwrap();
        assert!(u.steer > 0.0);
    }

    #[test]
    fn throttle_intervals_increase() {
        let map = two_lane_map();
        let ctx = LaneContext::from_map(&map, LaneId(0)).unwrap();
        let cfg = DynamicsConfig::default();
        let s = car(0.0, 0.0, 5.0, 0.0);
        let a: Vec<f64> = (1..=3)
            .map(|j| nominal_control(&s, Action::Throttle(j), &ctx, &cfg).unwrap().accel)
            .collect();
        assert!(a[0] > 0.0 && a[0] < a[1] && a[1] < a[2] && a[2] <= cfg.accel_max);
        // Near the speed cap the throttle fades out.
        let fast = car(0.0, 0.0, 14.9, 0.0);
        assert!(nominal_control(&fast, Action::Throttle(3), &ctx, &cfg).unwrap().accel <= 0.1 + 1e-12);
    }

    #[test]
    fn lane_keeping_converges_from_offset() {
        let map = two_lane_map();
        let cfg = DynamicsConfig::default();
        let ctx = LaneContext::from_map(&map, LaneId(0)).unwrap();
        let mut s = car(0.0, 1.0, 10.0, 0.0);
        for _ in 0..400 {
            let u = nominal_control(&s, Action::KeepLane, &ctx, &cfg).unwrap();
            s = step_bicycle(&s, &u, cfg.dt, &cfg);
        }
        assert!(s.y.abs() < 0.05, "residual offset {}", s.y);
    }
}
