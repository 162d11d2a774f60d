use super::checkpoint::Checkpoint;
use super::config::{Mode, PtbName};
use super::episode::{run_episode, EpisodeSetup, LearnedPolicy, Policy};
use crate::perturb::sub_seed;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const EVAL_STREAM: u64 = 20;

/// One point of the per-episode return scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub episode: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub collided: bool,
    pub emergency_stops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub ptb: PtbName,
    pub episodes: usize,
    pub collision_free_rate: f64,
    pub mean_episode_return: f64,
    pub scatter: Vec<ScatterPoint>,
}

impl EvalReport {
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("episode,seed,mean_return,collided,emergency_stops\n");
        for p in &self.scatter {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.episode, p.seed, p.mean_return, p.collided, p.emergency_stops
            );
        }
        out
    }
}

/// Run `episodes` test episodes of `ck` under `ptb` with greedy actions.
pub fn evaluate(ck: &Checkpoint, ptb: PtbName, episodes: usize, seed: u64) -> Result<EvalReport> {
    let space = ck.config.dynamics.action_space();
    let mut policy = LearnedPolicy {
        params: &ck.agents,
        space,
        explore: 0.0,
        greedy: true,
    };
    evaluate_policy(ck, ptb, episodes, seed, &mut policy)
}

/// Like [`evaluate`] with any policy, using the checkpoint's scenario,
/// configuration and shield.
pub fn evaluate_policy(
    ck: &Checkpoint,
    ptb: PtbName,
    episodes: usize,
    seed: u64,
    policy: &mut dyn Policy,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let mut scatter = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let ep_seed = sub_seed(seed, &[EVAL_STREAM, episode as u64]);
        let out = run_episode(
            &EpisodeSetup {
                spec: &ck.scenario,
                mode: Mode::Test,
                config: &ck.config,
                shield: ck.shield,
                ptb,
                seed: ep_seed,
            },
            policy,
        )?;
        let s = out.log.summary;
        scatter.push(ScatterPoint {
            episode,
            seed: ep_seed,
            mean_return: s.mean_return,
            collided: s.collided,
            emergency_stops: s.emergency_steps,
        });
    }
    let n = episodes as f64;
    Ok(EvalReport {
        scenario: ck.scenario.name.clone(),
        ptb,
        episodes,
        collision_free_rate: scatter.iter().filter(|p| !p.collided).count() as f64 / n,
        mean_episode_return: scatter.iter().map(|p| p.mean_return).sum::<f64>() / n,
        scatter,
    })
}

/// Perturbation columns of the results table.
pub const TABLE_PTBS: [PtbName; 3] = [PtbName::Rand, PtbName::Time, PtbName::Veh];

/// Scenario rows by perturbation columns, each cell holding the
/// collision-free rate and mean episode return.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<(String, Vec<Option<EvalReport>>)>,
}

impl ResultsTable {
    pub fn insert(&mut self, report: EvalReport) {
        let Some(col) = TABLE_PTBS.iter().position(|p| *p == report.ptb) else {
            return;
        };
        let row = match self.rows.iter().position(|(name, _)| *name == report.scenario) {
            Some(i) => i,
            None => {
                self.rows.push((report.scenario.clone(), vec![None; TABLE_PTBS.len()]));
                self.rows.len() - 1
            }
        };
        self.rows[row].1[col] = Some(report);
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14}", "scenario");
        for p in TABLE_PTBS {
            let _ = write!(out, " | {:>22}", format!("{p} (CF rate / return)"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        for (name, cells) in &self.rows {
            let _ = write!(out, "{name:<14}");
            for c in cells {
                let cell = match c {
                    Some(r) => format!("{:.0}% / {:.1}", 100.0 * r.collision_free_rate, r.mean_episode_return),
                    None => "-".into(),
                };
                let _ = write!(out, " | {cell:>22}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,ptb,episodes,collision_free_rate,mean_episode_return\n");
        for (name, cells) in &self.rows {
            for r in cells.iter().flatten() {
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{}",
                    r.ptb, r.episodes, r.collision_free_rate, r.mean_episode_return
                );
            }
        }
        out
    }
}
