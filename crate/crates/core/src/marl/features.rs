//! Fixed-length encoding of an agent's local state.
//!
//! Layout: 9 ego features, then 2 connected-neighbor slots and 3 unconnected
//! slots of 7 features each, nearest first, absent slots all zero.
//! Every slot is expressed relative to the ego pose.

use crate::world::{AgentState, Observation, RoadMap, Vec2};
use crate::{Error, Result};
use rand::Rng;

pub const EGO_DIM: usize = 9;
pub const SLOT_DIM: usize = 7;
pub const NEIGHBOR_SLOTS: usize = 2;
pub const UCV_SLOTS: usize = 3;
pub const SLOTS: usize = NEIGHBOR_SLOTS + UCV_SLOTS;
pub const FEATURE_DIM: usize = EGO_DIM + SLOTS * SLOT_DIM;
const LANE_SLOTS: usize = 4;

const SPEED_SCALE: f64 = 15.0;
const ACCEL_SCALE: f64 = 4.0;
const OFFSET_SCALE: f64 = 3.5;
const POSITION_SCALE: f64 = 50.0;
const DISTANCE_SCALE: f64 = 200.0;

// Offsets inside a slot.
const PRESENT: usize = 0;
const REL_X: usize = 1;
const REL_Y: usize = 2;
const VEL_X: usize = 3;
const VEL_Y: usize = 4;
const COS: usize = 5;
const SIN: usize = 6;

fn slot_offset(slot: usize) -> usize {
    EGO_DIM + slot * SLOT_DIM
}

/// Feature columns an observation error can move.
pub fn perturbable_columns() -> Vec<usize> {
    (0..SLOTS)
        .flat_map(|k| [REL_X, REL_Y, VEL_X, VEL_Y].map(|c| slot_offset(k) + c))
        .collect()
}

/// Encode `agent` for a policy or critic.
pub fn encode(agent: &AgentState, map: &RoadMap, destination: Vec2) -> Result<Vec<f64>> {
    let own = &agent.own;
    let lane_id = own
        .lane_detect
        .ok_or_else(|| Error::InvalidPath(format!("agent {} has no lane", agent.agent)))?;
    let lane_index = map.lane_index(lane_id).ok_or(Error::UnknownLane(lane_id))?;
    let path = &map.lane(lane_id)?.path;
    let pos = own.position();
    let proj = path.project_point(pos);
    let mut f = vec![0.0; FEATURE_DIM];
    f[0] = own.v[0].hypot(own.v[1]) / SPEED_SCALE;
    f[1] = own.alpha.unwrap_or(0.0) / ACCEL_SCALE;
    f[2] = proj.d / OFFSET_SCALE;
    f[3] = path.heading_error(proj.s, own.heading);
    f[4 + lane_index.min(LANE_SLOTS - 1)] = 1.0;
    f[8] = (destination - pos).norm() / DISTANCE_SCALE;
    let slots = agent
        .neighbors
        .iter()
        .take(NEIGHBOR_SLOTS)
        .enumerate()
        .chain(agent.ucvs.iter().take(UCV_SLOTS).enumerate().map(|(i, o)| (NEIGHBOR_SLOTS + i, o)));
    for (k, o) in slots {
        write_slot(&mut f[slot_offset(k)..slot_offset(k) + SLOT_DIM], own, o);
    }
    Ok(f)
}

fn write_slot(slot: &mut [f64], own: &Observation, o: &Observation) {
    let rel = (o.position() - own.position()).to_frame(own.heading);
    let vel = Vec2::new(o.v[0], o.v[1]).from_frame(o.heading).to_frame(own.heading);
    let (sin, cos) = (o.heading - own.heading).sin_cos();
    slot[PRESENT] = 1.0;
    slot[REL_X] = rel.x / POSITION_SCALE;
    slot[REL_Y] = rel.y / POSITION_SCALE;
    slot[VEL_X] = vel.x / SPEED_SCALE;
    slot[VEL_Y] = vel.y / SPEED_SCALE;
    slot[COS] = cos;
    slot[SIN] = sin;
}

/// Indices of occupied slots.
pub fn present_slots(f: &[f64]) -> Vec<usize> {
    (0..SLOTS).filter(|&k| f[slot_offset(k) + PRESENT] != 0.0).collect()
}

/// Apply an observation error `(e_l, e_v)` to slot `slot` in place.
///
/// Errors act along the observed vehicle's heading, which the slot stores
/// relative to the ego, so the shift is exact for the linear encoding.
pub fn perturb_slot(f: &mut [f64], slot: usize, e_l: f64, e_v: f64) {
    let o = slot_offset(slot);
    let (cos, sin) = (f[o + COS], f[o + SIN]);
    f[o + REL_X] += e_l * cos / POSITION_SCALE;
    f[o + REL_Y] += e_l * sin / POSITION_SCALE;
    f[o + VEL_X] += e_v * cos / SPEED_SCALE;
    f[o + VEL_Y] += e_v * sin / SPEED_SCALE;
}

/// Perturbed copies of `f` within the `epsilon` ball of every occupied slot:
/// `n_random` draws with every slot perturbed independently and uniformly
/// over the disc, followed by the four axis extremes of each slot alone.
pub fn adversarial_candidates<R: Rng + ?Sized>(f: &[f64], epsilon: f64, n_random: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let slots = present_slots(f);
    if epsilon <= 0.0 || slots.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n_random + 4 * slots.len());
    for _ in 0..n_random {
        let mut g = f.to_vec();
        for &k in &slots {
            let r = epsilon * rng.random_range(0.0f64..=1.0).sqrt();
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            perturb_slot(&mut g, k, r * theta.cos(), r * theta.sin());
        }
        out.push(g);
    }
    for &k in &slots {
        for (e_l, e_v) in [(epsilon, 0.0), (-epsilon, 0.0), (0.0, epsilon), (0.0, -epsilon)] {
            let mut g = f.to_vec();
            perturb_slot(&mut g, k, e_l, e_v);
            out.push(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsConfig;
    use crate::perturb::PerturbationSchedule;
    use crate::world::{build_joint_state, Lane, LaneId, Path, Vehicle, VehicleId, VehicleState, World};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> World {
        let lane = |i: u32| Lane {
            path: Path::straight(LaneId(i), Vec2::new(-100.0, 3.5 * i as f64), Vec2::new(500.0, 3.5 * i as f64)).unwrap(),
            width: 3.5,
            left: (i == 0).then_some(LaneId(1)),
            right: (i == 1).then_some(LaneId(0)),
        };
        let map = RoadMap {
            lanes: vec![lane(0), lane(1)],
        };
        let mut ucv = VehicleState::new(VehicleId(2), 30.0, 0.0, 9.0, 0.0, false);
        ucv.psi = 0.2;
        World::new(
            map,
            vec![
                Vehicle::new(VehicleState::new(VehicleId(0), 0.0, 0.0, 12.0, 0.0, true), LaneId(0)),
                Vehicle::new(VehicleState::new(VehicleId(1), -10.0, 3.5, 10.0, 0.0, true), LaneId(1)),
                Vehicle::new(ucv, LaneId(0)),
            ],
        )
    }

    fn agent0(schedule: &PerturbationSchedule) -> Vec<f64> {
        let w = world();
        let j = build_joint_state(&w, 200.0, schedule, &DynamicsConfig::default());
        encode(&j.agents[0], &w.map, Vec2::new(200.0, 0.0)).unwrap()
    }

    #[test]
    fn layout() {
        assert_eq!(FEATURE_DIM, 44);
        let f = agent0(&PerturbationSchedule::none());
        assert_eq!(f.len(), FEATURE_DIM);
        assert!((f[0] - 12.0 / 15.0).abs() < 1e-12);
        assert_eq!(f[4], 1.0);
        assert!((f[8] - 1.0).abs() < 1e-12);
        assert_eq!(present_slots(&f), vec![0, 2]);
        // neighbor 10 m behind, one lane left
        assert!((f[slot_offset(0) + REL_X] + 0.2).abs() < 1e-12);
        assert!((f[slot_offset(0) + REL_Y] - 0.07).abs() < 1e-12);
        assert_eq!(perturbable_columns().len(), 20);
    }

    #[test]
    fn slot_perturbation_matches_reencoding() {
        let w = world();
        let dyn_cfg = DynamicsConfig::default();
        let j = build_joint_state(&w, 200.0, &PerturbationSchedule::none(), &dyn_cfg);
        let mut agent = j.agents[0].clone();
        let base = encode(&agent, &w.map, Vec2::new(200.0, 0.0)).unwrap();
        agent.ucvs[0] = agent.ucvs[0].perturbed(1.5, -0.75);
        let moved = encode(&agent, &w.map, Vec2::new(200.0, 0.0)).unwrap();
        let mut shifted = base.clone();
        perturb_slot(&mut shifted, 2, 1.5, -0.75);
        for (a, b) in moved.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_ne!(base, moved);
    }

    #[test]
    fn candidates_stay_in_ball() {
        let f = agent0(&PerturbationSchedule::none());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(adversarial_candidates(&f, 0.0, 8, &mut rng).is_empty());
        let c = adversarial_candidates(&f, 2.0, 8, &mut rng);
        assert_eq!(c.len(), 8 + 4 * 2);
        let cols = perturbable_columns();
        for g in &c {
            for (i, (a, b)) in g.iter().zip(&f).enumerate() {
                if !cols.contains(&i) {
                    assert_eq!(a, b);
                }
            }
            for k in present_slots(&f) {
                let o = slot_offset(k);
                let e_l = ((g[o + REL_X] - f[o + REL_X]) * POSITION_SCALE).hypot((g[o + REL_Y] - f[o + REL_Y]) * POSITION_SCALE);
                let e_v = ((g[o + VEL_X] - f[o + VEL_X]) * SPEED_SCALE).hypot((g[o + VEL_Y] - f[o + VEL_Y]) * SPEED_SCALE);
                assert!(e_l.hypot(e_v) <= 2.0 + 1e-9);
            }
        }
    }
}
