use super::config::{make_schedule, Config, Mode, PtbName};
use super::reward::{reward, SafetyEvents};
use super::scenario::{ucv_control, ScenarioSpec, UcvPlan};
use crate::dynamics::{emergency_control, Action, ActionSpace, ControlInput, DynamicsConfig};
use crate::marl::features::{encode, FEATURE_DIM};
use crate::marl::losses::{greedy_action, policy_forward, select_action};
use crate::marl::{ParameterSet, Step, Trajectory};
use crate::perturb::{sub_seed, PerturbationSchedule};
use crate::shield::{safety_shield, ActionVerdict, Shield, ShieldMode};
use crate::world::{
    build_joint_state, detect_collisions, AgentState, AppliedPerturbation, CollisionPair, LaneId, Vec2, VehicleId,
    VehicleState, World,
};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

pub const LOG_FORMAT: &str = "cavsim-episode";
pub const LOG_VERSION: u32 = 1;
/// Largest state deviation a replay tolerates.
pub const REPLAY_TOL: f64 = 1e-9;

/// What an agent's policy picked and with what probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub prob: f64,
}

/// Chooses among shield-approved actions.
pub trait Policy {
    /// `agent` indexes the scenario's agents; `safe` is never empty and
    /// never the lone emergency stop. Returning the emergency stop is always
    /// accepted and charged like a shield-triggered one.
    fn choose(&mut self, agent: usize, local: &[f64], safe: &[Action], rng: &mut ChaCha8Rng) -> Result<Choice>;
}

/// Always the same action when it is safe, otherwise the first safe one.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn choose(&mut self, _: usize, _: &[f64], safe: &[Action], _: &mut ChaCha8Rng) -> Result<Choice> {
        let action = if safe.contains(&self.0) { self.0 } else { safe[0] };
        Ok(Choice { action, prob: 1.0 })
    }
}

/// Per-agent actors; sampling with exploration, or greedy.
pub struct LearnedPolicy<'a> {
    pub params: &'a [ParameterSet],
    pub space: ActionSpace,
    pub explore: f64,
    pub greedy: bool,
}

impl Policy for LearnedPolicy<'_> {
    fn choose(&mut self, agent: usize, local: &[f64], safe: &[Action], rng: &mut ChaCha8Rng) -> Result<Choice> {
        let dist = policy_forward(&self.params[agent].actor, local);
        let action = if self.greedy {
            greedy_action(&dist, safe, &self.space)?
        } else {
            select_action(&dist, safe, &self.space, self.explore, rng)?
        };
        let prob = self.space.index(action).map_or(0.0, |i| dist[i]);
        Ok(Choice { action, prob })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub ptb: PtbName,
    pub shield: ShieldMode,
    pub dynamics: DynamicsConfig,
    pub comm_range: f64,
    pub schedule: PerturbationSchedule,
    pub world: World,
    pub destinations: BTreeMap<VehicleId, Vec2>,
    pub ucv_plans: Vec<UcvPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub agent: VehicleId,
    pub action: Action,
    pub emergency: bool,
    pub safe_set: Vec<Action>,
    pub verdicts: Vec<ActionVerdict>,
    pub control: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Every vehicle before the step.
    pub states: Vec<VehicleState>,
    /// Reference lane of every vehicle before the step.
    pub lanes: Vec<LaneId>,
    /// Last applied input of every vehicle before the step.
    pub prev_controls: Vec<ControlInput>,
    pub frozen: Vec<bool>,
    /// What each active agent observed.
    pub observations: Vec<AgentState>,
    pub perturbations: Vec<AppliedPerturbation>,
    pub bound_violations: usize,
    pub decisions: Vec<AgentDecision>,
    /// Input applied to every vehicle.
    pub controls: Vec<ControlInput>,
    pub next_states: Vec<VehicleState>,
    pub new_collisions: Vec<CollisionPair>,
    /// One entry per agent, in agent order.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub collided: bool,
    pub collision_events: usize,
    pub emergency_steps: usize,
    pub bound_violations: usize,
    /// Summed reward per agent over the steps it was active.
    pub returns: Vec<f64>,
    /// Agent-averaged summed reward.
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogLine {
    Header(Box<EpisodeHeader>),
    Step(Box<StepRecord>),
    Summary(EpisodeSummary),
}

impl EpisodeLog {
    pub fn agents(&self) -> Vec<VehicleId> {
        self.header.world.agent_ids()
    }

    /// One JSON object per line: header, steps, summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &LogLine::Header(Box::new(self.header.clone())))?;
        out.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut out, &LogLine::Step(Box::new(s.clone())))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &LogLine::Summary(self.summary.clone()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::format("episode log", format!("line {}: content after summary", n + 1)));
            }
            match parse_log_line(&line).map_err(|e| Error::format("episode log", format!("line {}: {e}", n + 1)))? {
                LogLine::Header(h) if header.is_none() => {
                    if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                        return Err(Error::format(
                            "episode log",
                            format!("unsupported format {} v{}", h.format, h.version),
                        ));
                    }
                    header = Some(*h);
                }
                LogLine::Step(s) if header.is_some() => {
                    if s.t != steps.len() {
                        return Err(Error::format("episode log", format!("line {}: step {} out of order", n + 1, s.t)));
                    }
                    steps.push(*s);
                }
                LogLine::Summary(s) if header.is_some() => summary = Some(s),
                _ => return Err(Error::format("episode log", format!("line {}: unexpected record", n + 1))),
            }
        }
        match (header, summary) {
            (Some(header), Some(summary)) => Ok(Self { header, steps, summary }),
            _ => Err(Error::format("episode log", "missing header or summary")),
        }
    }
}

fn parse_log_line(line: &str) -> std::result::Result<LogLine, serde_json::Error> {
    serde_json::from_str(line)
}

/// Check that one line of an episode log is well formed.
pub fn validate_log_line(line: &str) -> Result<()> {
    parse_log_line(line)
        .map(|_| ())
        .map_err(|e| Error::format("episode log", e.to_string()))
}

/// Everything that determines an episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup<'a> {
    pub spec: &'a ScenarioSpec,
    pub mode: Mode,
    pub config: &'a Config,
    pub shield: ShieldMode,
    pub ptb: PtbName,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub log: EpisodeLog,
    /// One per agent.
    pub trajectories: Vec<Trajectory>,
}

/// Roll out one episode under `policy`.
pub fn run_episode(setup: &EpisodeSetup<'_>, policy: &mut dyn Policy) -> Result<EpisodeOutput> {
    let cfg = setup.config;
    let dyn_cfg = &cfg.dynamics;
    let scenario = setup.spec.instantiate(setup.mode, sub_seed(setup.seed, &[0]))?;
    let agents = scenario.agent_ids();
    let schedule = make_schedule(setup.ptb, sub_seed(setup.seed, &[2]), cfg, &scenario.ucv_ids());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(setup.seed, &[1]));
    let header = EpisodeHeader {
        format: LOG_FORMAT.into(),
        version: LOG_VERSION,
        scenario: scenario.name.clone(),
        mode: setup.mode,
        seed: setup.seed,
        ptb: setup.ptb,
        shield: setup.shield,
        dynamics: dyn_cfg.clone(),
        comm_range: cfg.run.comm_range,
        schedule: schedule.clone(),
        world: scenario.world.clone(),
        destinations: scenario.destinations.clone(),
        ucv_plans: scenario.ucv_plans.clone(),
    };
    let mut world = scenario.world;
    let map = world.map.clone();
    let shield = Shield::new(&map, cfg.shield, dyn_cfg.clone(), setup.shield)?;
    let plans: BTreeMap<VehicleId, UcvPlan> = scenario.ucv_plans.iter().map(|p| (p.id, *p)).collect();
    let mut seen: BTreeSet<CollisionPair> = BTreeSet::new();
    let mut trajectories = vec![Trajectory::default(); agents.len()];
    let mut steps = Vec::with_capacity(cfg.run.episode_len);
    let mut returns = vec![0.0; agents.len()];
    let (mut emergency_steps, mut bound_violations) = (0, 0);

    for t in 0..cfg.run.episode_len {
        let step = (|| -> Result<StepRecord> {
            let frozen: Vec<bool> = world.vehicles.iter().map(|v| v.frozen).collect();
            let active = |id: VehicleId| world.vehicle(id).map(|v| !v.frozen).unwrap_or(false);
            let mut joint = build_joint_state(&world, cfg.run.comm_range, &schedule, dyn_cfg);
            joint.agents.retain(|a| active(a.agent));
            let outcome = safety_shield(&joint, &shield)?;
            let mut locals = vec![vec![0.0; FEATURE_DIM]; agents.len()];
            for a in &joint.agents {
                let k = agents.iter().position(|x| *x == a.agent).expect("agent order");
                locals[k] = encode(a, &map, scenario.destinations[&a.agent])?;
            }
            let global: Vec<f64> = locals.concat();

            let mut controls = vec![ControlInput::ZERO; world.vehicles.len()];
            let mut decisions = Vec::new();
            let mut choices = BTreeMap::new();
            for out in &outcome.agents {
                let k = agents.iter().position(|x| *x == out.agent).expect("agent order");
                let safe = out.safe_set();
                let choice = if out.emergency {
                    Choice {
                        action: Action::EmergencyStop,
                        prob: 0.0,
                    }
                } else {
                    policy.choose(k, &locals[k], &safe, &mut rng)?
                };
                // Stopping is always allowed; anything else must be approved.
                let control = if choice.action == Action::EmergencyStop {
                    Some(emergency_control(dyn_cfg))
                } else {
                    out.control_for(choice.action, dyn_cfg)
                }
                .ok_or_else(|| Error::InvalidConfig(format!("policy chose {} outside the safe set", choice.action)))?;
                let idx = world.index_of(out.agent).ok_or(Error::UnknownVehicle(out.agent))?;
                controls[idx] = control;
                choices.insert(out.agent, (k, choice));
                decisions.push(AgentDecision {
                    agent: out.agent,
                    action: choice.action,
                    emergency: out.emergency,
                    safe_set: safe,
                    verdicts: out.verdicts.clone(),
                    control,
                });
            }
            for (idx, veh) in world.vehicles.iter().enumerate() {
                if let Some(plan) = plans.get(&veh.state.id) {
                    if !veh.frozen {
                        controls[idx] = ucv_control(veh, plan, t, &map, dyn_cfg)?;
                    }
                }
            }

            let states = world.states();
            let lanes = world.vehicles.iter().map(|v| v.lane).collect();
            let prev_controls = world.vehicles.iter().map(|v| v.control).collect();
            world.step(&controls, dyn_cfg);
            let now = detect_collisions(&world.states());
            let new_collisions: Vec<CollisionPair> = now.difference(&seen).copied().collect();
            let mut newly_collided = BTreeSet::new();
            for (a, b) in &new_collisions {
                for id in [a, b] {
                    let idx = world.index_of(*id).ok_or(Error::UnknownVehicle(*id))?;
                    if !world.vehicles[idx].frozen {
                        world.vehicles[idx].frozen = true;
                        newly_collided.insert(*id);
                    }
                }
            }
            seen.extend(now);

            let events: Vec<SafetyEvents> = agents
                .iter()
                .map(|id| SafetyEvents {
                    emergency: choices.get(id).is_some_and(|c| c.1.action == Action::EmergencyStop),
                    collided: newly_collided.contains(id),
                })
                .collect();
            let rewards = reward(
                &world,
                &agents,
                &scenario.destinations,
                &events,
                cfg.shield.emergency_penalty,
                &cfg.reward,
            )?;
            for (k, choice) in choices.values() {
                trajectories[*k].steps.push(Step {
                    local: locals[*k].clone(),
                    global: global.clone(),
                    action: choice.action,
                    p_old: choice.prob,
                    reward: rewards[*k],
                });
            }
            for (k, id) in agents.iter().enumerate() {
                if newly_collided.contains(id) {
                    trajectories[k].terminal = true;
                }
            }
            Ok(StepRecord {
                t,
                states,
                lanes,
                prev_controls,
                frozen,
                observations: joint.agents,
                perturbations: joint.perturbations,
                bound_violations: joint.bound_violations,
                decisions,
                controls,
                next_states: world.states(),
                new_collisions,
                rewards,
            })
        })()
        .map_err(|e| e.at_step(t))?;
        emergency_steps += step.decisions.iter().filter(|d| d.action == Action::EmergencyStop).count();
        bound_violations += step.bound_violations;
        // A collided agent stops accruing once its collision step is counted.
        for d in &step.decisions {
            let k = agents.iter().position(|x| *x == d.agent).expect("agent order");
            returns[k] += step.rewards[k];
        }
        steps.push(step);
    }

    let final_global: Vec<f64> = {
        let mut joint = build_joint_state(&world, cfg.run.comm_range, &schedule, dyn_cfg);
        joint.agents.retain(|a| world.vehicle(a.agent).map(|v| !v.frozen).unwrap_or(false));
        let mut locals = vec![vec![0.0; FEATURE_DIM]; agents.len()];
        for a in &joint.agents {
            let k = agents.iter().position(|x| *x == a.agent).expect("agent order");
            locals[k] = encode(a, &map, scenario.destinations[&a.agent])?;
        }
        locals.concat()
    };
    for tr in &mut trajectories {
        tr.final_global = final_global.clone();
    }
    let collision_events = steps.iter().map(|s| s.new_collisions.len()).sum();
    let mean_return = if returns.is_empty() {
        0.0
    } else {
        returns.iter().sum::<f64>() / returns.len() as f64
    };
    let summary = EpisodeSummary {
        steps: steps.len(),
        collided: collision_events > 0,
        collision_events,
        emergency_steps,
        bound_violations,
        returns,
        mean_return,
    };
    Ok(EpisodeOutput {
        log: EpisodeLog { header, steps, summary },
        trajectories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub max_deviation: f64,
}

fn deviation(a: &VehicleState, b: &VehicleState) -> f64 {
    [a.x - b.x, a.y - b.y, a.v - b.v, a.psi - b.psi]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
}

fn compare(step: usize, replayed: &[VehicleState], logged: &[VehicleState], worst: &mut f64) -> Result<()> {
    if replayed.len() != logged.len() {
        return Err(Error::format("episode log", format!("step {step}: vehicle count changed")));
    }
    for (a, b) in replayed.iter().zip(logged) {
        let d = deviation(a, b);
        if !(d <= REPLAY_TOL) || a.id != b.id {
            return Err(Error::ReplayMismatch {
                step,
                vehicle: b.id,
                deviation: d,
            });
        }
        *worst = worst.max(d);
    }
    Ok(())
}

/// Re-run the logged inputs through the dynamics and check every state.
pub fn replay(log: &EpisodeLog) -> Result<ReplayReport> {
    let mut world = log.header.world.clone();
    let dyn_cfg = &log.header.dynamics;
    dyn_cfg.validate()?;
    let mut worst = 0.0f64;
    for rec in &log.steps {
        compare(rec.t, &world.states(), &rec.states, &mut worst)?;
        if let Some(v) = world.vehicles.iter().zip(&rec.lanes).find(|(v, l)| v.lane != **l) {
            return Err(Error::format(
                "episode log",
                format!("step {}: lane of vehicle {} differs", rec.t, v.0.state.id),
            ));
        }
        if rec.controls.len() != world.vehicles.len() {
            return Err(Error::format("episode log", format!("step {}: control count mismatch", rec.t)));
        }
        world.step(&rec.controls, dyn_cfg);
        compare(rec.t, &world.states(), &rec.next_states, &mut worst)?;
        for (a, b) in &rec.new_collisions {
            for id in [a, b] {
                let idx = world.index_of(*id).ok_or(Error::UnknownVehicle(*id))?;
                world.vehicles[idx].frozen = true;
            }
        }
    }
    Ok(ReplayReport {
        steps: log.steps.len(),
        max_deviation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ScenarioName;

    fn setup<'a>(spec: &'a ScenarioSpec, cfg: &'a Config, shield: ShieldMode, ptb: PtbName) -> EpisodeSetup<'a> {
        EpisodeSetup {
            spec,
            mode: Mode::Test,
            config: cfg,
            shield,
            ptb,
            seed: 7,
        }
    }

    fn short_config() -> Config {
        let mut cfg = Config::default();
        cfg.run.episode_len = 60;
        cfg
    }

    #[test]
    fn highway_keep_lane_runs_and_replays() {
        let spec = ScenarioSpec::builtin(ScenarioName::Highway);
        let cfg = short_config();
        let out = run_episode(&setup(&spec, &cfg, ShieldMode::Robust, PtbName::Rand), &mut ConstantPolicy(Action::KeepLane))
            .unwrap();
        assert_eq!(out.log.steps.len(), 60);
        assert_eq!(out.trajectories.len(), 3);
        assert!(out.trajectories.iter().all(|t| t.steps.len() == 60));
        assert!(!out.log.summary.collided);
        let report = replay(&out.log).unwrap();
        assert_eq!(report.steps, 60);
        assert!(report.max_deviation <= REPLAY_TOL);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let spec = ScenarioSpec::builtin(ScenarioName::Intersection);
        let cfg = short_config();
        let out = run_episode(&setup(&spec, &cfg, ShieldMode::Robust, PtbName::Veh), &mut ConstantPolicy(Action::Throttle(2)))
            .unwrap();
        let mut buf = Vec::new();
        out.log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 62);
        for line in text.lines() {
            validate_log_line(line).unwrap();
        }
        let back = EpisodeLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, out.log);
    }

    #[test]
    fn same_seed_same_log() {
        let spec = ScenarioSpec::builtin(ScenarioName::Highway);
        let cfg = short_config();
        let s = setup(&spec, &cfg, ShieldMode::Robust, PtbName::Time);
        let a = run_episode(&s, &mut ConstantPolicy(Action::Throttle(3))).unwrap();
        let b = run_episode(&s, &mut ConstantPolicy(Action::Throttle(3))).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn tampered_log_fails_replay() {
        let spec = ScenarioSpec::builtin(ScenarioName::Highway);
        let cfg = short_config();
        let mut log = run_episode(&setup(&spec, &cfg, ShieldMode::Robust, PtbName::None), &mut ConstantPolicy(Action::KeepLane))
            .unwrap()
            .log;
        log.steps[10].controls[0].accel += 0.5;
        match replay(&log) {
            Err(Error::ReplayMismatch { step, .. }) => assert_eq!(step, 10),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn executed_actions_come_from_the_safe_set() {
        let spec = ScenarioSpec::builtin(ScenarioName::Intersection);
        let cfg = short_config();
        let out = run_episode(&setup(&spec, &cfg, ShieldMode::Robust, PtbName::Rand), &mut ConstantPolicy(Action::Throttle(3)))
            .unwrap();
        for rec in &out.log.steps {
            for d in &rec.decisions {
                if d.emergency {
                    assert_eq!(d.action, Action::EmergencyStop);
                } else {
                    assert!(d.safe_set.contains(&d.action));
                }
            }
        }
    }

    #[test]
    fn malformed_logs_rejected() {
        assert!(EpisodeLog::read_jsonl(&b""[..]).is_err());
        assert!(EpisodeLog::read_jsonl(&b"{\"summary\":{}}\n"[..]).is_err());
        assert!(validate_log_line("{\"step\": 3}").is_err());
        assert!(validate_log_line("not json").is_err());
    }
}
