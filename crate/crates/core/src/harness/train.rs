use super::checkpoint::{Checkpoint, Layout};
use super::config::{Config, Mode};
use super::episode::{run_episode, EpisodeSetup, LearnedPolicy};
use super::scenario::ScenarioSpec;
use crate::marl::{Algo, AgentLearner, LossReport, ParameterSet, FEATURE_DIM};
use crate::perturb::sub_seed;
use crate::shield::ShieldMode;
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const INIT_STREAM: u64 = 10;
const EPISODE_STREAM: u64 = 11;
const UPDATE_STREAM: u64 = 12;

#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub spec: &'a ScenarioSpec,
    pub config: &'a Config,
    pub algo: Algo,
    pub shield: ShieldMode,
    pub seed: u64,
    pub episodes: usize,
}

/// One line of the training metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub seed: u64,
    pub explore: f64,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub collisions: usize,
    pub emergency_stops: usize,
    pub bound_violations: usize,
    pub losses: Vec<LossReport>,
    pub lambda_w: Vec<f64>,
}

/// Train one learner per agent, reporting every episode to `on_episode`.
pub fn train(setup: &TrainSetup<'_>, on_episode: &mut dyn FnMut(&EpisodeMetrics) -> Result<()>) -> Result<Checkpoint> {
    let cfg = setup.config;
    cfg.validate()?;
    setup.spec.validate()?;
    let marl = cfg.marl.for_algo(setup.algo);
    let space = cfg.dynamics.action_space();
    let n_agents = setup.spec.cavs.len();
    let mut init = ChaCha8Rng::seed_from_u64(sub_seed(setup.seed, &[INIT_STREAM]));
    let mut learners: Vec<AgentLearner> = (0..n_agents)
        .map(|_| AgentLearner::new(ParameterSet::new(&marl, n_agents, space.len(), &mut init), &marl))
        .collect();

    for episode in 0..setup.episodes {
        let seed = sub_seed(setup.seed, &[EPISODE_STREAM, episode as u64]);
        let explore = marl.explore_rate(episode, setup.episodes);
        let params: Vec<ParameterSet> = learners.iter().map(|l| l.params.clone()).collect();
        let mut policy = LearnedPolicy {
            params: &params,
            space,
            explore,
            greedy: false,
        };
        let out = run_episode(
            &EpisodeSetup {
                spec: setup.spec,
                mode: Mode::Train,
                config: cfg,
                shield: setup.shield,
                ptb: cfg.perturbation.train,
                seed,
            },
            &mut policy,
        )?;
        let mut losses = Vec::with_capacity(n_agents);
        for (k, (learner, traj)) in learners.iter_mut().zip(&out.trajectories).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(setup.seed, &[UPDATE_STREAM, episode as u64, k as u64]));
            losses.push(learner.update(traj, &space, &marl, &mut rng, episode, k)?);
            if (episode + 1) % marl.target_sync == 0 {
                learner.params.sync_target();
            }
        }
        let s = &out.log.summary;
        on_episode(&EpisodeMetrics {
            episode,
            seed,
            explore,
            returns: s.returns.clone(),
            mean_return: s.mean_return,
            collisions: s.collision_events,
            emergency_stops: s.emergency_steps,
            bound_violations: s.bound_violations,
            losses,
            lambda_w: learners.iter().map(|l| l.params.lambda_w).collect(),
        })?;
    }

    Ok(Checkpoint {
        layout: Layout {
            feature_dim: FEATURE_DIM,
            n_agents,
            action_count: space.len(),
            hidden: marl.hidden.clone(),
        },
        algo: setup.algo,
        shield: setup.shield,
        seed: setup.seed,
        episodes_trained: setup.episodes,
        scenario: setup.spec.clone(),
        config: cfg.clone(),
        agents: learners.into_iter().map(|l| l.params).collect(),
    })
}
