//! Versioned parameter files.
//!
//! ```text
//! cavsim-checkpoint 1
//! sha256 <hex digest of the body>
//! <JSON body>
//! ```
//!
//! The body holds a layout header and one parameter set per agent. Every
//! network is stored as its layer sizes plus a flat array of weights, layer
//! by layer, each as row-major `out x in` weights followed by biases.

use super::config::Config;
use super::scenario::ScenarioSpec;
use crate::marl::{Algo, ParameterSet, FEATURE_DIM};
use crate::shield::ShieldMode;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &str = "cavsim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub feature_dim: usize,
    pub n_agents: usize,
    pub action_count: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layout: Layout,
    pub algo: Algo,
    pub shield: ShieldMode,
    pub seed: u64,
    pub episodes_trained: usize,
    pub scenario: ScenarioSpec,
    pub config: Config,
    pub agents: Vec<ParameterSet>,
}

impl Checkpoint {
    /// Every network must agree with the layout header.
    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        let bad = |d: String| Err(Error::format("checkpoint", d));
        self.config.validate()?;
        self.scenario.validate()?;
        if l.feature_dim != FEATURE_DIM {
            return bad(format!("feature size {} but this build uses {FEATURE_DIM}", l.feature_dim));
        }
        if self.agents.len() != l.n_agents || l.n_agents != self.scenario.cavs.len() {
            return bad(format!(
                "layout says {} agents, found {} parameter sets and {} scenario agents",
                l.n_agents,
                self.agents.len(),
                self.scenario.cavs.len()
            ));
        }
        if l.action_count != self.config.dynamics.action_space().len() {
            return bad(format!("action count {} does not match the configuration", l.action_count));
        }
        let joint = l.feature_dim * l.n_agents;
        let shape = |input: usize, out: usize| {
            let mut s = vec![input];
            s.extend(&l.hidden);
            s.push(out);
            s
        };
        for (i, p) in self.agents.iter().enumerate() {
            let nets = [
                ("actor", &p.actor, shape(l.feature_dim, l.action_count)),
                ("critic", &p.critic, shape(joint, 1)),
                ("worst_q", &p.worst_q, shape(joint, l.action_count)),
                ("worst_q_target", &p.worst_q_target, shape(joint, l.action_count)),
            ];
            for (name, net, want) in nets {
                if net.sizes() != want.as_slice() {
                    return bad(format!("agent {i} {name} has sizes {:?}, expected {want:?}", net.sizes()));
                }
            }
            p.check_finite(self.episodes_trained, i)?;
        }
        self.config.validate()?;
        self.scenario.validate()
    }

    pub fn to_text(&self) -> Result<String> {
        let body = serde_json::to_string(self)?;
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        Ok(format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nsha256 {digest}\n{body}\n"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.splitn(3, '\n');
        let magic = lines.next().unwrap_or_default();
        let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        if magic.trim_end_matches('\r') != expected {
            return Err(Error::format("checkpoint", format!("expected header {expected:?}")));
        }
        let digest = lines
            .next()
            .and_then(|l| l.trim_end_matches('\r').strip_prefix("sha256 "))
            .ok_or_else(|| Error::format("checkpoint", "missing sha256 line"))?;
        let body = lines.next().unwrap_or_default();
        let body = body.strip_suffix('\n').unwrap_or(body);
        let found = hex::encode(Sha256::digest(body.as_bytes()));
        if !found.eq_ignore_ascii_case(digest) {
            return Err(Error::ChecksumMismatch {
                expected: digest.to_string(),
                found,
            });
        }
        let ck: Checkpoint = serde_json::from_str(body)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
