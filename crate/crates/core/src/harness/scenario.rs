use super::config::{Mode, ScenarioName};
use crate::dynamics::{nominal_control, Action, ControlInput, DynamicsConfig, LaneContext};
use crate::world::{Lane, LaneId, Path, RoadMap, SignalPhase, Vec2, Vehicle, VehicleId, VehicleState, World};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Speed-tracking gain of scripted vehicles, 1/s.
const TRACKING_GAIN: f64 = 2.0;

/// Uniform band `[lo, hi]`.
pub type Band = (f64, f64);

fn draw<R: Rng + ?Sized>(rng: &mut R, band: Band) -> f64 {
    if band.1 > band.0 {
        rng.random_range(band.0..band.1)
    } else {
        band.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavSpawn {
    pub id: VehicleId,
    pub lane: LaneId,
    /// Arc-length along the lane.
    pub s: f64,
    pub speed: Band,
    /// Arc-length of the destination along the spawn lane.
    pub destination_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UcvBehavior {
    /// Hold the drawn speed.
    Cruise,
    /// In test mode only, drop to a speed from `speed` at a step drawn from `trigger`.
    SuddenBrake { trigger: (usize, usize), speed: Band },
    /// Placed so it reaches `conflict_s` along its lane after a time drawn
    /// from `arrival` seconds, ignoring the signal.
    Cross { conflict_s: f64, arrival: Band },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcvSpawn {
    pub id: VehicleId,
    pub lane: LaneId,
    /// Arc-length along the lane; ignored by crossing vehicles.
    #[serde(default)]
    pub s: f64,
    pub train_speed: Band,
    pub test_speed: Band,
    pub behavior: UcvBehavior,
}

/// Finite, non-negative and ordered.
fn band_ok(b: Band) -> bool {
    b.0.is_finite() && b.1.is_finite() && b.0 >= 0.0 && b.0 <= b.1
}

/// Static description of a scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub map: RoadMap,
    pub cavs: Vec<CavSpawn>,
    pub ucvs: Vec<UcvSpawn>,
}

/// Scripted longitudinal plan of one unconnected vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcvPlan {
    pub id: VehicleId,
    pub speed: f64,
    /// Step and new target speed of a sudden brake.
    pub brake: Option<(usize, f64)>,
}

impl UcvPlan {
    pub fn target_speed(&self, t: usize) -> f64 {
        match self.brake {
            Some((at, v)) if t >= at => v,
            _ => self.speed,
        }
    }
}

/// One randomized episode start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub world: World,
    pub destinations: BTreeMap<VehicleId, Vec2>,
    pub ucv_plans: Vec<UcvPlan>,
}

fn straight_lane(id: u32, from: Vec2, to: Vec2, left: Option<u32>, right: Option<u32>, signal: Option<SignalPhase>) -> Lane {
    Lane {
        path: Path::straight(LaneId(id), from, to)
            .expect("built-in lane geometry")
            .with_signal(signal),
        width: 3.5,
        left: left.map(LaneId),
        right: right.map(LaneId),
    }
}

impl ScenarioSpec {
    pub fn builtin(name: ScenarioName) -> Self {
        match name {
            ScenarioName::Highway => Self::highway(),
            ScenarioName::Intersection => Self::intersection(),
        }
    }

    /// Three lanes, one agent per lane with an unconnected vehicle 30 m ahead
    /// of each; in test mode the middle one brakes hard.
    pub fn highway() -> Self {
        let lane = |i: u32| {
            let y = 3.5 * i as f64;
            straight_lane(
                i,
                Vec2::new(0.0, y),
                Vec2::new(1000.0, y),
                (i < 2).then_some(i + 1),
                i.checked_sub(1),
                None,
            )
        };
        let cavs = (0..3)
            .map(|i| CavSpawn {
                id: VehicleId(i),
                lane: LaneId(i),
                s: 50.0,
                speed: (8.0, 10.0),
                destination_s: 250.0,
            })
            .collect();
        let ucvs = (0..3)
            .map(|i| UcvSpawn {
                id: VehicleId(3 + i),
                lane: LaneId(i),
                s: 80.0,
                train_speed: (8.0, 10.0),
                test_speed: (8.0, 10.0),
                behavior: if i == 1 {
                    UcvBehavior::SuddenBrake {
                        trigger: (40, 80),
                        speed: (3.0, 4.0),
                    }
                } else {
                    UcvBehavior::Cruise
                },
            })
            .collect();
        Self {
            name: "highway".into(),
            map: RoadMap {
                lanes: vec![lane(0), lane(1), lane(2)],
            },
            cavs,
            ucvs,
        }
    }

    /// Two eastbound lanes with a green signal crossed by a northbound and a
    /// southbound lane whose unconnected vehicles run the red light.
    pub fn intersection() -> Self {
        let lanes = vec![
            straight_lane(0, Vec2::new(-100.0, 0.0), Vec2::new(400.0, 0.0), Some(1), None, Some(SignalPhase::Green)),
            straight_lane(1, Vec2::new(-100.0, 3.5), Vec2::new(400.0, 3.5), None, Some(0), Some(SignalPhase::Green)),
            straight_lane(2, Vec2::new(42.0, -200.0), Vec2::new(42.0, 200.0), None, None, Some(SignalPhase::Red)),
            straight_lane(3, Vec2::new(45.5, 200.0), Vec2::new(45.5, -200.0), None, None, Some(SignalPhase::Red)),
        ];
        let cav = |id: u32, lane: u32, s: f64| CavSpawn {
            id: VehicleId(id),
            lane: LaneId(lane),
            s,
            speed: (8.0, 10.0),
            destination_s: 300.0,
        };
        let ucv = |id: u32, lane: u32, conflict_s: f64, arrival: Band| UcvSpawn {
            id: VehicleId(id),
            lane: LaneId(lane),
            s: 0.0,
            train_speed: (9.0, 11.0),
            test_speed: (7.5, 12.5),
            behavior: UcvBehavior::Cross { conflict_s, arrival },
        };
        Self {
            name: "intersection".into(),
            map: RoadMap { lanes },
            cavs: vec![cav(0, 0, 100.0), cav(1, 1, 95.0), cav(2, 0, 70.0)],
            ucvs: vec![ucv(3, 2, 201.75, (3.5, 6.5)), ucv(4, 3, 198.25, (4.0, 7.0))],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("scenario", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        if self.cavs.is_empty() {
            return Err(Error::InvalidConfig("scenario needs at least one agent".into()));
        }
        let mut ids = BTreeSet::new();
        let bands = self.cavs.iter().map(|c| (c.id, c.lane, c.speed, c.s)).chain(
            self.ucvs
                .iter()
                .flat_map(|u| [(u.id, u.lane, u.train_speed, u.s), (u.id, u.lane, u.test_speed, u.s)]),
        );
        for (id, lane, band, s) in bands {
            self.map.lane(lane)?;
            if !(band_ok(band) && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("vehicle {id} has an invalid speed band or position")));
            }
            ids.insert(id);
        }
        if let Some(c) = self.cavs.iter().find(|c| !c.destination_s.is_finite()) {
            return Err(Error::InvalidConfig(format!("vehicle {} has an invalid destination", c.id)));
        }
        if ids.len() != self.cavs.len() + self.ucvs.len() {
            return Err(Error::InvalidConfig("duplicate vehicle ids".into()));
        }
        for u in &self.ucvs {
            match u.behavior {
                UcvBehavior::Cruise => {}
                UcvBehavior::SuddenBrake { trigger, speed } => {
                    if trigger.0 > trigger.1 || !band_ok(speed) {
                        return Err(Error::InvalidConfig(format!("vehicle {} has an invalid brake plan", u.id)));
                    }
                }
                UcvBehavior::Cross { conflict_s, arrival } => {
                    if !(conflict_s.is_finite() && band_ok(arrival)) {
                        return Err(Error::InvalidConfig(format!("vehicle {} has an invalid crossing plan", u.id)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draw an episode start.
    pub fn instantiate(&self, mode: Mode, seed: u64) -> Result<Scenario> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vehicles = Vec::new();
        let mut destinations = BTreeMap::new();
        for c in &self.cavs {
            let path = &self.map.lane(c.lane)?.path;
            let v = draw(&mut rng, c.speed);
            vehicles.push(Vehicle::new(place(c.id, path, c.s, v, true), c.lane));
            destinations.insert(c.id, path.point_at(c.destination_s));
        }
        let mut ucv_plans = Vec::new();
        for u in &self.ucvs {
            let path = &self.map.lane(u.lane)?.path;
            let band = match mode {
                Mode::Train => u.train_speed,
                Mode::Test => u.test_speed,
            };
            let v = draw(&mut rng, band);
            let (s, brake) = match u.behavior {
                UcvBehavior::Cruise => (u.s, None),
                UcvBehavior::SuddenBrake { trigger, speed } => {
                    let at = rng.random_range(trigger.0..=trigger.1);
                    let to = draw(&mut rng, speed);
                    (u.s, (mode == Mode::Test).then_some((at, to)))
                }
                UcvBehavior::Cross { conflict_s, arrival } => (conflict_s - v * draw(&mut rng, arrival), None),
            };
            vehicles.push(Vehicle::new(place(u.id, path, s, v, false), u.lane));
            ucv_plans.push(UcvPlan { id: u.id, speed: v, brake });
        }
        Ok(Scenario {
            name: self.name.clone(),
            mode,
            world: World::new(self.map.clone(), vehicles),
            destinations,
            ucv_plans,
        })
    }
}

fn place(id: VehicleId, path: &Path, s: f64, v: f64, connected: bool) -> VehicleState {
    let p = path.point_at(s);
    VehicleState::new(id, p.x, p.y, v, path.heading_at(s), connected)
}

impl Scenario {
    pub fn agent_ids(&self) -> Vec<VehicleId> {
        self.world.agent_ids()
    }

    pub fn ucv_ids(&self) -> Vec<VehicleId> {
        self.ucv_plans.iter().map(|p| p.id).collect()
    }
}

/// Lane keeping with proportional speed tracking toward the plan.
pub fn ucv_control(vehicle: &Vehicle, plan: &UcvPlan, t: usize, map: &RoadMap, dyn_cfg: &DynamicsConfig) -> Result<ControlInput> {
    let ctx = LaneContext::from_map(map, vehicle.lane)?;
    let keep = nominal_control(&vehicle.state, Action::KeepLane, &ctx, dyn_cfg)?;
    let accel = TRACKING_GAIN * (plan.target_speed(t) - vehicle.state.v);
    Ok(dyn_cfg.clamp(ControlInput::new(accel, keep.steer)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highway_layout() {
        let s = ScenarioSpec::highway().instantiate(Mode::Test, 3).unwrap();
        assert_eq!(s.agent_ids(), vec![VehicleId(0), VehicleId(1), VehicleId(2)]);
        assert_eq!(s.ucv_ids(), vec![VehicleId(3), VehicleId(4), VehicleId(5)]);
        for v in &s.world.vehicles {
            assert!((8.0..10.0).contains(&v.state.v));
        }
        let brakes: Vec<_> = s.ucv_plans.iter().filter_map(|p| p.brake).collect();
        assert_eq!(brakes.len(), 1);
        assert!((40..=80).contains(&brakes[0].0) && (3.0..4.0).contains(&brakes[0].1));
        assert_eq!(s.destinations[&VehicleId(1)], Vec2::new(250.0, 3.5));
        let train = ScenarioSpec::highway().instantiate(Mode::Train, 3).unwrap();
        assert!(train.ucv_plans.iter().all(|p| p.brake.is_none()));
    }

    #[test]
    fn intersection_crossers_arrive_on_time() {
        for seed in 0..20 {
            let s = ScenarioSpec::intersection().instantiate(Mode::Test, seed).unwrap();
            let north = s.world.vehicle(VehicleId(3)).unwrap();
            assert!((7.5..12.5).contains(&north.state.v));
            let eta = (1.75 - north.state.y) / north.state.v;
            assert!((3.5..6.5).contains(&eta), "{eta}");
            assert!((north.state.psi - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
            let south = s.world.vehicle(VehicleId(4)).unwrap();
            assert!(south.state.y > 1.75);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = ScenarioSpec::intersection().instantiate(Mode::Train, 9).unwrap();
        let b = ScenarioSpec::intersection().instantiate(Mode::Train, 9).unwrap();
        let c = ScenarioSpec::intersection().instantiate(Mode::Train, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn toml_round_trip() {
        for spec in [ScenarioSpec::highway(), ScenarioSpec::intersection()] {
            let text = spec.to_toml_string().unwrap();
            assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ScenarioSpec::highway();
        spec.ucvs[0].id = VehicleId(0);
        assert!(spec.validate().is_err());
        let mut spec = ScenarioSpec::highway();
        spec.cavs[0].lane = LaneId(9);
        assert!(spec.validate().is_err());
        let mut spec = ScenarioSpec::highway();
        spec.cavs.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn braking_plan_switches_speed() {
        let plan = UcvPlan {
            id: VehicleId(3),
            speed: 9.0,
            brake: Some((50, 3.5)),
        };
        assert_eq!(plan.target_speed(49), 9.0);
        assert_eq!(plan.target_speed(50), 3.5);
    }
}
