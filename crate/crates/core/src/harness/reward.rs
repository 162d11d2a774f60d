use super::config::RewardConfig;
use crate::world::{Vec2, VehicleId, World};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Safety events of one agent during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SafetyEvents {
    /// The shield found no safe action.
    pub emergency: bool,
    /// The agent collided for the first time.
    pub collided: bool,
}

/// Shared team reward from ground truth after a step.
///
/// Each agent contributes its speed, minus its distance to its destination,
/// plus its safety penalties, all weighted by `1 / n_agents`. Every agent
/// receives the same value.
pub fn reward(
    world: &World,
    agents: &[VehicleId],
    destinations: &BTreeMap<VehicleId, Vec2>,
    events: &[SafetyEvents],
    emergency_penalty: f64,
    cfg: &RewardConfig,
) -> Result<Vec<f64>> {
    assert_eq!(agents.len(), events.len());
    if agents.is_empty() {
        return Ok(Vec::new());
    }
    let mu = 1.0 / agents.len() as f64;
    let mut total = 0.0;
    for (id, ev) in agents.iter().zip(events) {
        let state = world.vehicle(*id)?.state;
        let dest = destinations
            .get(id)
            .ok_or_else(|| Error::InvalidConfig(format!("agent {id} has no destination")))?;
        let mut safety = 0.0;
        if ev.collided {
            safety -= cfg.collision_penalty;
        }
        if ev.emergency {
            safety -= emergency_penalty;
        }
        total += mu * state.v - mu * (state.position() - *dest).norm() + mu * safety;
    }
    Ok(vec![total; agents.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{RoadMap, Vehicle, VehicleState};
    use crate::world::LaneId;

    fn world(cars: &[(u32, f64, f64)]) -> (World, Vec<VehicleId>, BTreeMap<VehicleId, Vec2>) {
        let vehicles = cars
            .iter()
            .map(|(id, x, v)| Vehicle::new(VehicleState::new(VehicleId(*id), *x, 0.0, *v, 0.0, true), LaneId(0)))
            .collect();
        let ids = cars.iter().map(|c| VehicleId(c.0)).collect();
        let dest = cars.iter().map(|c| (VehicleId(c.0), Vec2::new(c.1, 0.0))).collect();
        (World::new(RoadMap::default(), vehicles), ids, dest)
    }

    #[test]
    fn parked_at_destinations_is_zero() {
        let (w, ids, dest) = world(&[(0, 10.0, 0.0), (1, 20.0, 0.0), (2, 30.0, 0.0)]);
        let r = reward(&w, &ids, &dest, &[SafetyEvents::default(); 3], 10.0, &RewardConfig::default()).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn one_collision_shared() {
        let (w, ids, dest) = world(&[(0, 10.0, 0.0), (1, 20.0, 0.0), (2, 30.0, 0.0)]);
        let mut ev = [SafetyEvents::default(); 3];
        ev[1].collided = true;
        let r = reward(&w, &ids, &dest, &ev, 10.0, &RewardConfig::default()).unwrap();
        assert!((r[0] + 200.0 / 3.0).abs() < 1e-12);
        assert!(r.iter().all(|x| *x == r[0]));
    }

    #[test]
    fn speed_distance_and_emergency_terms() {
        let (w, ids, mut dest) = world(&[(0, 0.0, 6.0), (1, 0.0, 3.0)]);
        dest.insert(VehicleId(0), Vec2::new(3.0, 4.0));
        let ev = [
            SafetyEvents {
                emergency: true,
                collided: false,
            },
            SafetyEvents::default(),
        ];
        let r = reward(&w, &ids, &dest, &ev, 10.0, &RewardConfig::default()).unwrap();
        assert!((r[0] - (4.5 - 2.5 - 5.0)).abs() < 1e-12);
        assert_eq!(r[0], r[1]);
    }

    #[test]
    fn missing_destination_is_an_error() {
        let (w, ids, _) = world(&[(0, 0.0, 1.0)]);
        assert!(reward(&w, &ids, &BTreeMap::new(), &[SafetyEvents::default()], 10.0, &RewardConfig::default()).is_err());
    }
}
