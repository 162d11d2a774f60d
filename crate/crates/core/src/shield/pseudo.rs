use super::Ego;
use crate::world::{Observation, Path, Vec2, VehicleId};
use serde::{Deserialize, Serialize};

/// Extra clearance added to the conflict region around a crossing point.
const REGION_MARGIN: f64 = 0.5;

/// A crossing vehicle mapped onto the ego path as a virtual same-lane car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoCar {
    /// Arc-length on the ego path.
    pub s: f64,
    /// Speed along the ego path.
    pub v: f64,
    pub source_id: VehicleId,
    pub length: f64,
}

/// Map a crossing `target` onto `ego_path`.
///
/// With `s_c` the ego arc-length of the conflict point and `d_t` the
/// target's signed distance to it along its own heading, the pseudo car
/// sits at `s_c - d_t` and moves at the target's travel speed, so it reaches
/// `s_c` exactly when the target reaches the conflict point. Targets that
/// are neither inside the conflict region nor approaching it are dropped,
/// as are conflict points the ego has already cleared or that lie beyond
/// `horizon`.
pub fn pseudo_car_transform(ego_path: &Path, ego: &Ego, target: &Observation, horizon: f64) -> Option<PseudoCar> {
    let dir = Vec2::from_angle(target.heading);
    let pos = target.position();
    let cleared = ego.length / 2.0 + target.width / 2.0;
    let (s_c, d_t) = ego_path
        .line_intersections(pos, dir)
        .into_iter()
        .find(|(s, _)| *s - ego.s >= -cleared && *s - ego.s <= horizon)?;
    let region = target.length / 2.0 + ego.width / 2.0 + REGION_MARGIN;
    let speed = target.speed();
    let inside = d_t.abs() <= region;
    let approaching = d_t > 0.0 && speed > 0.0;
    if !(inside || approaching) || d_t > horizon {
        return None;
    }
    Some(PseudoCar {
        s: s_c - d_t,
        v: speed.max(0.0),
        source_id: target.target_id,
        length: target.length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::LaneId;

    fn ego_path() -> Path {
        Path::straight(LaneId(0), Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)).unwrap()
    }

    fn ego() -> Ego {
        Ego {
            s: 0.0,
            d: 0.0,
            v: 8.0,
            length: 4.5,
            width: 2.0,
        }
    }

    /// Northbound target crossing x = 35 at distance `d_t` before the path.
    fn crossing(d_t: f64, speed: f64) -> Observation {
        let heading = std::f64::consts::FRAC_PI_2;
        let world = Vec2::new(35.0, -d_t);
        let l = world.to_frame(heading);
        Observation {
            target_id: VehicleId(9),
            l: [l.x, l.y],
            v: [speed, 0.0],
            alpha: None,
            lane_detect: None,
            heading,
            length: 4.5,
            width: 2.0,
        }
    }

    #[test]
    fn arc_length_bookkeeping() {
        let p = pseudo_car_transform(&ego_path(), &ego(), &crossing(20.0, 10.0), 60.0).unwrap();
        assert!((p.s - 15.0).abs() < 1e-9, "{p:?}");
        assert!((p.v - 10.0).abs() < 1e-12);
        assert_eq!(p.source_id, VehicleId(9));
    }

    #[test]
    fn at_conflict_point() {
        let p = pseudo_car_transform(&ego_path(), &ego(), &crossing(0.0, 10.0), 60.0).unwrap();
        assert!((p.s - 35.0).abs() < 1e-9);
    }

    #[test]
    fn receding_target_dropped() {
        assert!(pseudo_car_transform(&ego_path(), &ego(), &crossing(-5.0, 10.0), 60.0).is_none());
        // Still inside the conflict region while leaving.
        assert!(pseudo_car_transform(&ego_path(), &ego(), &crossing(-3.0, 10.0), 60.0).is_some());
    }

    #[test]
    fn beyond_horizon_or_stopped() {
        assert!(pseudo_car_transform(&ego_path(), &ego(), &crossing(80.0, 10.0), 60.0).is_none());
        assert!(pseudo_car_transform(&ego_path(), &ego(), &crossing(20.0, 0.0), 60.0).is_none());
        let mut far_ego = ego();
        far_ego.s = 50.0;
        assert!(pseudo_car_transform(&ego_path(), &far_ego, &crossing(20.0, 10.0), 60.0).is_none());
    }

    #[test]
    fn parallel_target_has_no_conflict() {
        let mut o = crossing(0.0, 10.0);
        o.heading = 0.0;
        let l = Vec2::new(35.0, 3.5).to_frame(0.0);
        o.l = [l.x, l.y];
        assert!(pseudo_car_transform(&ego_path(), &ego(), &o, 60.0).is_none());
    }
}
