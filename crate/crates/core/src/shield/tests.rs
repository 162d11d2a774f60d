use super::*;
use crate::perturb::PerturbationSchedule;
use crate::world::{build_joint_state, Lane, Vec2, Vehicle, World};
use proptest::prelude::*;

fn params() -> DistanceParams {
    ShieldConfig::default().distances(&DynamicsConfig::default())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn road(lanes: usize) -> RoadMap {
    RoadMap {
        lanes: (0..lanes as u32)
            .map(|i| Lane {
                path: Path::straight(LaneId(i), Vec2::new(-100.0, 3.5 * i as f64), Vec2::new(2000.0, 3.5 * i as f64))
                    .unwrap(),
                width: 3.5,
                left: (i + 1 < lanes as u32).then_some(LaneId(i + 1)),
                right: i.checked_sub(1).map(LaneId),
            })
            .collect(),
    }
}

fn car(id: u32, x: f64, lane: u32, v: f64, connected: bool) -> Vehicle {
    Vehicle::new(
        VehicleState::new(VehicleId(id), x, 3.5 * lane as f64, v, 0.0, connected),
        LaneId(lane),
    )
}

fn joint(world: &World) -> JointState {
    build_joint_state(world, 200.0, &PerturbationSchedule::none(), &DynamicsConfig::default())
}

fn shield(map: &RoadMap, mode: ShieldMode, epsilon: f64) -> Shield<'_> {
    let cfg = ShieldConfig {
        epsilon,
        lipschitz_sum: Some(1.5),
        ..ShieldConfig::default()
    };
    Shield::new(map, cfg, DynamicsConfig::default(), mode).unwrap()
}

#[test]
fn follow_distance() {
    let p = params();
    assert_eq!(safety_distance_follow(0.0, 0.0, &p), 2.0);
    assert!(close(safety_distance_follow(10.0, 10.0, &p), 12.0, 1e-12));
    assert!(close(safety_distance_follow(10.0, 0.0, &p), 10.0 + 100.0 / 12.0 + 2.0, 1e-12));
    assert!(close(safety_distance_follow(10.0, 0.0, &p), 20.333, 1e-3));
}

#[test]
fn lead_distance() {
    let p = params();
    assert_eq!(safety_distance_lead(0.0, 0.0, &p), 2.0);
    assert!(close(safety_distance_lead(10.0, 10.0, &p), 12.0, 1e-12));
    assert!(close(safety_distance_lead(12.0, 8.0, &p), 3.333, 1e-3));
}

fn ego_at(v: f64) -> Ego {
    Ego {
        s: 0.0,
        d: 0.0,
        v,
        length: 4.5,
        width: 2.0,
    }
}

fn target(role: Role, gap: f64, v: f64) -> LongitudinalTarget {
    let s = gap + 4.5;
    LongitudinalTarget {
        source: VehicleId(1),
        role,
        s: if role == Role::Front { s } else { -s },
        v,
        length: 4.5,
        pseudo: false,
    }
}

#[test]
fn barrier_examples() {
    let p = params();
    let h = barrier_values(&ego_at(10.0), &[target(Role::Front, 30.0, 10.0)], &p);
    assert!(close(h[0], 18.0, 1e-12));
    let d = safety_distance_follow(10.0, 10.0, &p);
    let h = barrier_values(&ego_at(10.0), &[target(Role::Front, d, 10.0)], &p);
    assert!(close(h[0], 0.0, 1e-12));
    let h = barrier_values(&ego_at(12.0), &[target(Role::Rear, 10.0, 8.0)], &p);
    assert!(close(h[0], 6.667, 1e-3));
}

#[test]
fn buffer_examples() {
    assert_eq!(robust_buffer(1.5, 0.0), 0.0);
    assert!(close(robust_buffer(1.5, 2.0), 3.0, 1e-12));
    assert!(close(robust_buffer(1.5, 4.0), 2.0 * robust_buffer(1.5, 2.0), 1e-12));
}

#[test]
fn margin_value() {
    assert!(close(sampling_margin(&params(), &DynamicsConfig::default()), 0.15, 1e-12));
}

#[test]
fn front_row_matches_closed_form() {
    let p = params();
    let (h, c) = barrier_row(&ego_at(9.0), &target(Role::Front, 25.0, 7.0), &p, 1.0, 0.0, 0.0);
    // dh/dt = (v_f - v) - (c1 + c2 v / A) accel
    assert!(close(c.a[0], -(1.0 + 9.0 / 6.0), 1e-12));
    assert!(close(c.b, -h - (7.0 - 9.0), 1e-12));
}

#[test]
fn lipschitz_estimate_envelope() {
    let cfg = ShieldConfig::default();
    let dyn_cfg = DynamicsConfig::default();
    let est = estimate_lipschitz_sum(&cfg, &dyn_cfg, &LipschitzSampling::default());
    // Worst case is a fast follower: d/dv_r of the rear row is 1 + gamma (c1 + c2 v_r / A).
    let upper = 1.5 * ((2.0 + 17.0 / 6.0f64).powi(2) + 1.0).sqrt();
    assert!(est > 1.5 * 3.0 && est <= upper, "{est}");
    let again = estimate_lipschitz_sum(&cfg, &dyn_cfg, &LipschitzSampling::default());
    assert_eq!(est, again);
}

#[test]
fn far_leader_passes_nominal() {
    let map = road(1);
    let world = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), car(1, 66.5, 0, 10.0, false)]);
    let sh = shield(&map, ShieldMode::Robust, 2.0);
    let j = joint(&world);
    let v = check_action_safe(&j.agents[0], Action::KeepLane, &sh).unwrap();
    match v {
        Verdict::Safe { u, nominal, binding } => {
            assert!(close(u.accel, nominal.accel, 1e-12) && close(u.steer, nominal.steer, 1e-12));
            assert!(binding.is_none());
        }
        Verdict::Unsafe { .. } => panic!("expected safe"),
    }
}

#[test]
fn open_road_full_set() {
    let map = road(3);
    let world = World::new(map.clone(), vec![car(0, 0.0, 1, 10.0, true)]);
    let sh = shield(&map, ShieldMode::Robust, 2.0);
    let out = safety_shield(&joint(&world), &sh).unwrap();
    let a = &out.agents[0];
    assert!(!a.emergency);
    assert_eq!(a.safe_set().len(), DynamicsConfig::default().action_space().len());
    assert_eq!(a.safety_reward, 0.0);
}

#[test]
fn road_edge_lane_change_unsafe() {
    let map = road(1);
    let world = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true)]);
    let sh = shield(&map, ShieldMode::Robust, 2.0);
    let j = joint(&world);
    for a in [Action::ChangeLeft, Action::ChangeRight] {
        assert_eq!(
            check_action_safe(&j.agents[0], a, &sh).unwrap(),
            Verdict::Unsafe {
                reason: UnsafeReason::NoAdjacentLane
            }
        );
    }
}

/// Largest acceleration allowed by a single front row, by grid scan.
fn grid_feasible(c: &Constraint, lo: f64, hi: f64) -> bool {
    let n = ((hi - lo) / 1e-3).round() as usize;
    (0..=n).any(|i| {
        let a = lo + (hi - lo) * i as f64 / n as f64;
        c.a[0] * a >= c.b - 1e-9
    })
}

#[test]
fn hopeless_gap_is_unsafe_for_everything() {
    let map = road(1);
    // gap 1 m at 10 m/s behind a stopped car: needs accel < -11.
    let world = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), car(1, 5.5, 0, 0.0, false)]);
    let sh = shield(&map, ShieldMode::Plain, 0.0);
    let j = joint(&world);
    let (ego, t) = constraint_targets(&j.agents[0], Action::Throttle(3), &sh).unwrap()[0];
    let (_, row) = barrier_row(&ego, &t, &sh.params, 1.0, 0.0, sh.margin);
    assert!(!grid_feasible(&row, -6.0, 4.0));
    assert_eq!(
        check_action_safe(&j.agents[0], Action::Throttle(3), &sh).unwrap(),
        Verdict::Unsafe {
            reason: UnsafeReason::Infeasible
        }
    );
    let out = safety_shield(&j, &sh).unwrap();
    assert!(out.agents[0].emergency);
    assert_eq!(out.agents[0].safe_set(), vec![Action::EmergencyStop]);
    assert_eq!(out.agents[0].safety_reward, -10.0);
    let u = out.agents[0].control_for(Action::EmergencyStop, &sh.dynamics).unwrap();
    assert_eq!((u.accel, u.steer), (-6.0, 0.0));
}

#[test]
fn only_full_braking_survives() {
    let map = road(1);
    // v = 10, v_f = 5, D_SF = 18.25; gap 13.25 gives h = -5 and
    // requires accel <= (-5 - 5 - 0.15) / (8 / 3), about -3.81.
    let world = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), car(1, 17.75, 0, 5.0, false)]);
    let sh = shield(&map, ShieldMode::Plain, 0.0);
    let j = joint(&world);
    let out = safety_shield(&j, &sh).unwrap();
    assert_eq!(out.agents[0].safe_set(), vec![Action::Brake]);
    for v in &out.agents[0].verdicts {
        if let Some((ego, t)) = constraint_targets(&j.agents[0], v.action, &sh).ok().and_then(|x| x.first().copied()) {
            let (_, row) = barrier_row(&ego, &t, &sh.params, 1.0, 0.0, sh.margin);
            let floor = accel_floor(v.action, &sh.dynamics);
            let expect = v.action != Action::ChangeLeft && v.action != Action::ChangeRight && grid_feasible(&row, floor, 4.0);
            assert_eq!(v.verdict.is_safe(), expect, "{}", v.action);
        }
    }
    let u = out.agents[0].control_for(Action::Brake, &sh.dynamics).unwrap();
    assert!(u.accel <= -3.8 && u.accel >= -6.0);
    match out.agents[0].verdicts.iter().find(|v| v.action == Action::Brake).unwrap().verdict {
        Verdict::Safe { binding, .. } => assert_eq!(binding.unwrap().source, VehicleId(1)),
        _ => unreachable!(),
    }
}

#[test]
fn lane_change_sees_target_lane() {
    let map = road(2);
    let world = World::new(
        map.clone(),
        vec![car(0, 0.0, 0, 10.0, true), car(1, 2.0, 1, 10.0, false)],
    );
    let sh = shield(&map, ShieldMode::Robust, 2.0);
    let j = joint(&world);
    assert!(!check_action_safe(&j.agents[0], Action::ChangeLeft, &sh).unwrap().is_safe());
    assert!(check_action_safe(&j.agents[0], Action::KeepLane, &sh).unwrap().is_safe());
}

#[test]
fn crossing_vehicle_acts_like_pseudo_leader() {
    let map = road(1);
    let mut crosser = car(1, 35.0, 0, 10.0, false);
    crosser.state.y = -20.0;
    crosser.state.psi = std::f64::consts::FRAC_PI_2;
    let crossing = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), crosser]);
    let real = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), car(1, 15.0, 0, 10.0, false)]);
    let sh = shield(&map, ShieldMode::Robust, 2.0);
    let a = safety_shield(&joint(&crossing), &sh).unwrap();
    let b = safety_shield(&joint(&real), &sh).unwrap();
    for (x, y) in a.agents[0].verdicts.iter().zip(&b.agents[0].verdicts) {
        assert_eq!(x.verdict.is_safe(), y.verdict.is_safe(), "{}", x.action);
    }
    assert!(!a.agents[0].safe_set().contains(&Action::Throttle(3)));
}

#[test]
fn off_mode_passes_everything_but_missing_lanes() {
    let map = road(1);
    let world = World::new(map.clone(), vec![car(0, 0.0, 0, 10.0, true), car(1, 5.5, 0, 0.0, false)]);
    let sh = shield(&map, ShieldMode::Off, 2.0);
    let out = safety_shield(&joint(&world), &sh).unwrap();
    assert_eq!(out.agents[0].safe_set().len(), 5);
}

#[test]
fn config_validation() {
    assert!(ShieldConfig::default().validate().is_ok());
    let bad = ShieldConfig {
        c2: -1.0,
        ..ShieldConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
}

proptest! {
    #[test]
    fn larger_epsilon_shrinks_safe_set(
        gap in 0.0f64..60.0,
        v in 0.0f64..15.0,
        v_f in 0.0f64..15.0,
        rear_gap in 0.0f64..60.0,
        v_r in 0.0f64..15.0,
        eps in 0.0f64..3.0,
        extra in 0.0f64..3.0,
    ) {
        let map = road(2);
        let world = World::new(map.clone(), vec![
            car(0, 0.0, 0, v, true),
            car(1, gap + 4.5, 0, v_f, false),
            car(2, -(rear_gap + 4.5), 0, v_r, false),
            car(3, gap * 0.5, 1, v_f, false),
        ]);
        let j = joint(&world);
        let small = safety_shield(&j, &shield(&map, ShieldMode::Robust, eps)).unwrap();
        let large = safety_shield(&j, &shield(&map, ShieldMode::Robust, eps + extra)).unwrap();
        let small = small.agents[0].safe_set();
        for a in large.agents[0].safe_set() {
            prop_assert!(a == Action::EmergencyStop || small.contains(&a), "{a} safe only at larger epsilon");
        }
    }
}
