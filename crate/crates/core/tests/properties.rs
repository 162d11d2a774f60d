use cavsim::dynamics::{Action, ControlInput, DynamicsConfig};
use cavsim::harness::{
    replay, run_episode, Config, ConstantPolicy, EpisodeLog, EpisodeSetup, Mode, PtbName, ScenarioName, ScenarioSpec,
};
use cavsim::shield::ShieldMode;
use cavsim::world::{observe, LaneId, Vehicle, VehicleState, World};
use proptest::prelude::*;

fn scenario() -> impl Strategy<Value = ScenarioName> {
    prop::sample::select(ScenarioName::ALL.to_vec())
}

fn ptb() -> impl Strategy<Value = PtbName> {
    prop::sample::select(PtbName::ALL.to_vec())
}

fn shield() -> impl Strategy<Value = ShieldMode> {
    prop::sample::select(vec![ShieldMode::Robust, ShieldMode::Plain, ShieldMode::Off])
}

fn action() -> impl Strategy<Value = Action> {
    prop::sample::select(vec![
        Action::KeepLane,
        Action::ChangeLeft,
        Action::ChangeRight,
        Action::Brake,
        Action::Throttle(1),
        Action::Throttle(2),
        Action::Throttle(3),
    ])
}

fn episode(name: ScenarioName, mode: Mode, shield: ShieldMode, ptb: PtbName, a: Action, seed: u64) -> EpisodeLog {
    let spec = ScenarioSpec::builtin(name);
    let mut cfg = Config::default();
    cfg.run.episode_len = 80;
    run_episode(
        &EpisodeSetup {
            spec: &spec,
            mode,
            config: &cfg,
            shield,
            ptb,
            seed,
        },
        &mut ConstantPolicy(a),
    )
    .unwrap()
    .log
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logs_replay_and_round_trip(
        name in scenario(), shield in shield(), ptb in ptb(), a in action(), seed in any::<u64>(),
        train in any::<bool>(),
    ) {
        let mode = if train { Mode::Train } else { Mode::Test };
        let log = episode(name, mode, shield, ptb, a, seed);
        let report = replay(&log).unwrap();
        prop_assert!(report.max_deviation <= 1e-9);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(EpisodeLog::read_jsonl(&buf[..]).unwrap(), log.clone());
        prop_assert_eq!(episode(name, mode, shield, ptb, a, seed), log);
    }

    #[test]
    fn rewards_identical_and_perturbations_travel_axis_only(
        name in scenario(), shield in shield(), ptb in ptb(), a in action(), seed in any::<u64>(),
    ) {
        let log = episode(name, Mode::Test, shield, ptb, a, seed);
        let dyn_cfg = &log.header.dynamics;
        for rec in &log.steps {
            prop_assert!(rec.rewards.windows(2).all(|w| w[0] == w[1]));
            for agent in &rec.observations {
                for obs in std::iter::once(&agent.own).chain(agent.others()) {
                    let i = rec.states.iter().position(|s| s.id == obs.target_id).unwrap();
                    let truth = observe(
                        &Vehicle {
                            state: rec.states[i],
                            lane: rec.lanes[i],
                            control: rec.prev_controls[i],
                            frozen: rec.frozen[i],
                        },
                        dyn_cfg,
                    );
                    prop_assert_eq!(obs.l[1].to_bits(), truth.l[1].to_bits());
                    prop_assert_eq!(obs.v[1].to_bits(), truth.v[1].to_bits());
                    prop_assert_eq!(obs.alpha, truth.alpha);
                    prop_assert_eq!(obs.lane_detect, truth.lane_detect);
                    prop_assert_eq!(obs.heading.to_bits(), truth.heading.to_bits());
                    if obs.target_id == agent.agent {
                        prop_assert_eq!(*obs, truth);
                    }
                }
            }
            for d in &rec.decisions {
                prop_assert!(d.action == Action::EmergencyStop || d.safe_set.contains(&d.action));
                prop_assert_eq!(d.emergency, d.safe_set == vec![Action::EmergencyStop]);
            }
        }
    }

    #[test]
    fn frozen_vehicles_stay_put(
        x in -50.0..50.0f64, v in 0.0..15.0f64, psi in -3.0..3.0f64,
        accel in -6.0..4.0f64, steer in -0.5..0.5f64, steps in 1usize..20,
    ) {
        let dyn_cfg = DynamicsConfig::default();
        let moving = Vehicle::new(VehicleState::new(cavsim::world::VehicleId(0), x, 0.0, v, psi, true), LaneId(0));
        let mut frozen = Vehicle::new(VehicleState::new(cavsim::world::VehicleId(1), x, 10.0, v, psi, false), LaneId(0));
        frozen.frozen = true;
        let mut world = World::new(Default::default(), vec![moving, frozen.clone()]);
        let u = ControlInput::new(accel, steer);
        for _ in 0..steps {
            world.step(&[u, u], &dyn_cfg);
        }
        prop_assert_eq!(world.t, steps);
        prop_assert_eq!(world.vehicles[1].state, frozen.state);
        prop_assert_eq!(world.vehicles[1].control, ControlInput::ZERO);
        prop_assert!(world.vehicles[0].state.v >= 0.0);
    }

    #[test]
    fn config_toml_round_trip(
        len in 0usize..500, eps in 0.0..5.0f64, penalty in 0.0..1e4f64, lr in 1e-5..1e-2f64, k in 1usize..6,
    ) {
        let mut cfg = Config::default();
        cfg.run.episode_len = len;
        cfg.shield.epsilon = eps;
        cfg.reward.collision_penalty = penalty;
        cfg.marl.actor_lr = lr;
        cfg.dynamics.throttle_intervals = k;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }
}

#[test]
fn scenario_files_round_trip() {
    for name in ScenarioName::ALL {
        let spec = ScenarioSpec::builtin(*name);
        let text = spec.to_toml_string().unwrap();
        assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec);
    }
}

/// `text` with each numeric TOML value, array elements included, swapped
/// one at a time for `replacement`.
fn numeric_swaps(text: &str, replacement: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let Some((key, value)) = line.split_once(" = ") else { continue };
        let (open, body, close) = match value.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
            Some(inner) => ("[", inner, "]"),
            None => ("", value, ""),
        };
        let items: Vec<&str> = body.split(", ").collect();
        for (j, item) in items.iter().enumerate() {
            if item.trim().parse::<f64>().is_err() {
                continue;
            }
            let mut swapped: Vec<&str> = items.clone();
            swapped[j] = replacement;
            let mut copy: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
            copy[i] = format!("{key} = {open}{}{close}", swapped.join(", "));
            out.push(copy.join("\n"));
        }
    }
    out
}

#[test]
fn non_finite_numbers_are_rejected_or_round_trip() {
    let cfg_text = Config::default().to_toml_string().unwrap();
    let scenario_texts: Vec<String> = ScenarioName::ALL
        .iter()
        .map(|n| ScenarioSpec::builtin(*n).to_toml_string().unwrap())
        .collect();
    assert!(numeric_swaps(&cfg_text, "nan").len() > 40);
    for bad in ["nan", "inf", "-inf"] {
        for text in numeric_swaps(&cfg_text, bad) {
            if let Ok(cfg) = Config::from_toml_str(&text) {
                let again = Config::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
                assert_eq!(again, cfg, "{text}");
            }
        }
        for base in &scenario_texts {
            for text in numeric_swaps(base, bad) {
                if let Ok(spec) = ScenarioSpec::from_toml_str(&text) {
                    let again = ScenarioSpec::from_toml_str(&spec.to_toml_string().unwrap()).unwrap();
                    assert_eq!(again, spec, "{text}");
                }
            }
        }
    }
}
