use super::features::{adversarial_candidates, FEATURE_DIM};
use super::losses::{
    compute_returns_advantages, importance_weight, rcs_loss_grad, reg_loss_grad, robust_advantage, value_loss_grad,
    worst_q_loss_grad, worst_q_target, ActorSample, QSample, RegSample, ValueSample, MIN_OLD_PROB,
};
use super::nn::{clip_grad_norm, Adam, Mlp, OutputInit};
use crate::dynamics::{Action, ActionSpace};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Robust advantage plus state regularization.
    Srmappo,
    /// Both robustness weights forced to zero.
    Mappo,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Srmappo => "srmappo",
            Algo::Mappo => "mappo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarlConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub clip_eps: f64,
    /// Passes over each episode's samples.
    pub epochs: usize,
    pub kappa_wst: f64,
    pub kappa_reg: f64,
    /// Random draws of the regularizer's inner maximum.
    pub n_adv: usize,
    /// Radius of the regularizer's perturbation ball, m.
    pub reg_epsilon: f64,
    pub explore_start: f64,
    pub explore_end: f64,
    /// Multiplier applied to rewards before learning.
    pub reward_scale: f64,
    pub normalize_advantages: bool,
    pub max_grad_norm: f64,
    /// Episodes between worst-case critic target refreshes.
    pub target_sync: usize,
    pub lambda_init: f64,
}

impl Default for MarlConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            clip_eps: 0.2,
            epochs: 4,
            kappa_wst: 0.1,
            kappa_reg: 0.05,
            n_adv: 8,
            reg_epsilon: 2.0,
            explore_start: 0.3,
            explore_end: 0.05,
            reward_scale: 0.01,
            normalize_advantages: true,
            max_grad_norm: 0.5,
            target_sync: 5,
            lambda_init: 0.0,
        }
    }
}

impl MarlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("marl.{m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list positive widths");
        }
        for (name, x) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("kappa_wst", self.kappa_wst),
            ("kappa_reg", self.kappa_reg),
            ("reg_epsilon", self.reg_epsilon),
            ("reward_scale", self.reward_scale),
            ("max_grad_norm", self.max_grad_norm),
            ("clip_eps", self.clip_eps),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.explore_start) || !(0.0..=1.0).contains(&self.explore_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be >= 1");
        }
        if !self.lambda_init.is_finite() {
            return bad("lambda_init must be finite");
        }
        Ok(())
    }

    /// Copy with the robustness terms matching `algo`.
    pub fn for_algo(&self, algo: Algo) -> Self {
        let mut c = self.clone();
        if algo == Algo::Mappo {
            c.kappa_wst = 0.0;
            c.kappa_reg = 0.0;
        }
        c
    }

    /// Linearly annealed exploration rate.
    pub fn explore_rate(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.explore_start;
        }
        let frac = (episode as f64 / (episodes - 1) as f64).min(1.0);
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }
}

/// One agent's networks and scalar weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub actor: Mlp,
    /// Centralized value critic.
    pub critic: Mlp,
    /// Centralized worst-case action-value critic.
    pub worst_q: Mlp,
    pub worst_q_target: Mlp,
    /// Carried for bookkeeping; does not enter the objective.
    pub lambda_w: f64,
    pub kappa_wst: f64,
    pub kappa_reg: f64,
}

impl ParameterSet {
    pub fn new<R: Rng + ?Sized>(cfg: &MarlConfig, n_agents: usize, actions: usize, rng: &mut R) -> Self {
        let layers = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&cfg.hidden);
            s.push(output);
            s
        };
        let global = FEATURE_DIM * n_agents;
        let actor = Mlp::new(&layers(FEATURE_DIM, actions), rng, OutputInit::Zero);
        let critic = Mlp::new(&layers(global, 1), rng, OutputInit::Scaled(0.1));
        let worst_q = Mlp::new(&layers(global, actions), rng, OutputInit::Scaled(0.1));
        Self {
            actor,
            critic,
            worst_q_target: worst_q.clone(),
            worst_q,
            lambda_w: cfg.lambda_init,
            kappa_wst: cfg.kappa_wst,
            kappa_reg: cfg.kappa_reg,
        }
    }

    pub fn check_finite(&self, episode: usize, agent: usize) -> Result<()> {
        for (which, net) in [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("worst_q", &self.worst_q),
            ("worst_q_target", &self.worst_q_target),
        ] {
            if !net.is_finite() {
                return Err(Error::NonFiniteParameters { episode, agent, which });
            }
        }
        Ok(())
    }

    pub fn sync_target(&mut self) {
        self.worst_q_target = self.worst_q.clone();
    }
}

/// One agent's experience at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Local features the actor saw.
    pub local: Vec<f64>,
    /// Concatenated features of all agents.
    pub global: Vec<f64>,
    pub action: Action,
    /// Behavior probability of `action`; zero for the emergency stop.
    pub p_old: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Global features after the last step.
    pub final_global: Vec<f64>,
    /// The episode ended in a terminal state rather than by truncation.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub worst_q: f64,
    pub rcs: f64,
    pub reg: f64,
    /// Steps left out of the actor update.
    pub skipped: usize,
}

/// Parameters plus optimizer state.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub params: ParameterSet,
    actor_opt: Adam,
    critic_opt: Adam,
    worst_q_opt: Adam,
}

fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

impl AgentLearner {
    pub fn new(params: ParameterSet, cfg: &MarlConfig) -> Self {
        Self {
            actor_opt: Adam::new(params.actor.params().len(), cfg.actor_lr),
            critic_opt: Adam::new(params.critic.params().len(), cfg.critic_lr),
            worst_q_opt: Adam::new(params.worst_q.params().len(), cfg.critic_lr),
            params,
        }
    }

    /// One training pass over `traj`: value critic, worst-case critic, then
    /// actor ascent on the clipped surrogate minus the weighted regularizer.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        traj: &Trajectory,
        space: &ActionSpace,
        cfg: &MarlConfig,
        rng: &mut R,
        episode: usize,
        agent: usize,
    ) -> Result<LossReport> {
        let mut report = LossReport::default();
        if traj.steps.is_empty() {
            return Ok(report);
        }
        let p = &mut self.params;
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward * cfg.reward_scale).collect();
        let values: Vec<f64> = traj.steps.iter().map(|s| p.critic.forward(&s.global)[0]).collect();
        let bootstrap = if traj.terminal { 0.0 } else { p.critic.forward(&traj.final_global)[0] };
        let (returns, advantages) = compute_returns_advantages(&rewards, &values, bootstrap, cfg.gamma);

        let value_batch: Vec<ValueSample> = traj
            .steps
            .iter()
            .zip(&returns)
            .map(|(s, r)| ValueSample {
                state: s.global.clone(),
                target: *r,
            })
            .collect();
        for _ in 0..cfg.epochs {
            let mut g = vec![0.0; p.critic.params().len()];
            report.value = value_loss_grad(&p.critic, &value_batch, &mut g);
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            self.critic_opt.step(p.critic.params_mut(), &g);
        }

        let n = traj.steps.len();
        let q_batch: Vec<QSample> = (0..n)
            .filter_map(|t| {
                let s = &traj.steps[t];
                let action = space.index(s.action)?;
                let next = match traj.steps.get(t + 1) {
                    Some(nx) => Some(nx.global.clone()),
                    None => (!traj.terminal).then(|| traj.final_global.clone()),
                };
                Some(QSample {
                    state: s.global.clone(),
                    action,
                    reward: rewards[t],
                    next,
                })
            })
            .collect();
        let targets: Vec<f64> = q_batch.iter().map(|s| worst_q_target(&p.worst_q_target, s, cfg.gamma)).collect();
        for _ in 0..cfg.epochs {
            let mut g = vec![0.0; p.worst_q.params().len()];
            report.worst_q = worst_q_loss_grad(&p.worst_q, &q_batch, &targets, &mut g);
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            self.worst_q_opt.step(p.worst_q.params_mut(), &g);
        }

        let mut actor_batch = Vec::with_capacity(n);
        let mut reg_batch = Vec::new();
        for (t, s) in traj.steps.iter().enumerate() {
            let Some(action) = space.index(s.action) else {
                report.skipped += 1;
                continue;
            };
            if !(s.p_old >= MIN_OLD_PROB) {
                report.skipped += 1;
                continue;
            }
            let q = if p.kappa_wst != 0.0 || p.kappa_reg != 0.0 {
                p.worst_q.forward(&s.global)
            } else {
                Vec::new()
            };
            let q_sa = q.get(action).copied().unwrap_or(0.0);
            actor_batch.push(ActorSample {
                features: s.local.clone(),
                action,
                p_old: s.p_old,
                advantage: robust_advantage(advantages[t], q_sa, p.kappa_wst),
            });
            if p.kappa_reg != 0.0 {
                let weight = importance_weight(p.critic.forward(&s.global)[0], &q);
                reg_batch.push(RegSample {
                    features: s.local.clone(),
                    weight,
                    candidates: adversarial_candidates(&s.local, cfg.reg_epsilon, cfg.n_adv, rng),
                });
            }
        }
        if cfg.normalize_advantages {
            let mut adv: Vec<f64> = actor_batch.iter().map(|s| s.advantage).collect();
            normalize(&mut adv);
            actor_batch.iter_mut().zip(adv).for_each(|(s, a)| s.advantage = a);
        }
        for _ in 0..cfg.epochs {
            let mut g = vec![0.0; p.actor.params().len()];
            report.rcs = rcs_loss_grad(&p.actor, &actor_batch, cfg.clip_eps, &mut g)?;
            if p.kappa_reg != 0.0 {
                let mut gr = vec![0.0; g.len()];
                report.reg = reg_loss_grad(&p.actor, &reg_batch, &mut gr);
                g.iter_mut().zip(&gr).for_each(|(a, b)| *a -= p.kappa_reg * b);
            }
            // ascend: the optimizer descends
            g.iter_mut().for_each(|x| *x = -*x);
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            self.actor_opt.step(p.actor.params_mut(), &g);
        }
        p.check_finite(episode, agent)?;
        Ok(report)
    }
}
