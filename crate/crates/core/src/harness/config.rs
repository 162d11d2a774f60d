use crate::dynamics::DynamicsConfig;
use crate::marl::MarlConfig;
use crate::perturb::{make_ptb_over_time, make_ptb_target_vehicles, PerturbationSchedule};
use crate::shield::ShieldConfig;
use crate::world::VehicleId;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Every tunable constant, loadable from TOML. Missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dynamics: DynamicsConfig,
    pub shield: ShieldConfig,
    pub marl: MarlConfig,
    pub reward: RewardConfig,
    pub perturbation: PerturbationConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Magnitude charged once to a vehicle that collides.
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            collision_penalty: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Bound checked on every emitted error; `None` uses the shield's epsilon.
    pub epsilon_bound: Option<f64>,
    /// Active window `[start, end)` of the over-time strategy, steps.
    pub window: (usize, usize),
    /// Perturbation applied while training.
    pub train: PtbName,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            epsilon_bound: None,
            window: (50, 150),
            train: PtbName::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub quick_train_episodes: usize,
    pub quick_test_episodes: usize,
    /// Steps per episode.
    pub episode_len: usize,
    /// Observation range, m.
    pub comm_range: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_episodes: 200,
            test_episodes: 50,
            quick_train_episodes: 20,
            quick_test_episodes: 10,
            episode_len: 200,
            comm_range: crate::world::DEFAULT_COMM_RANGE,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.shield.validate()?;
        self.marl.validate()?;
        if !(self.reward.collision_penalty.is_finite() && self.reward.collision_penalty >= 0.0) {
            return Err(Error::InvalidConfig("reward.collision_penalty must be finite and >= 0".into()));
        }
        if let Some(e) = self.perturbation.epsilon_bound {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::InvalidConfig("perturbation.epsilon_bound must be finite and >= 0".into()));
            }
        }
        if self.perturbation.window.0 > self.perturbation.window.1 {
            return Err(Error::InvalidConfig("perturbation.window start exceeds end".into()));
        }
        if !(self.run.comm_range.is_finite() && self.run.comm_range > 0.0) {
            return Err(Error::InvalidConfig("run.comm_range must be > 0".into()));
        }
        Ok(())
    }

    pub fn epsilon_bound(&self) -> f64 {
        self.perturbation.epsilon_bound.unwrap_or(self.shield.epsilon)
    }

    /// Episode counts for training and testing.
    pub fn episodes(&self, quick: bool) -> (usize, usize) {
        if quick {
            (self.run.quick_train_episodes, self.run.quick_test_episodes)
        } else {
            (self.run.train_episodes, self.run.test_episodes)
        }
    }
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::InvalidConfig(format!(concat!("unknown ", stringify!($name), " `{}`"), s))),
                }
            }
        }
    };
}

named_enum!(
    /// Which perturbation strategy an evaluation applies.
    PtbName {
        None => "none",
        Rand => "rand",
        Time => "time",
        Veh => "veh",
    }
);

named_enum!(ScenarioName {
    Highway => "highway",
    Intersection => "intersection",
});

named_enum!(Mode {
    Train => "train",
    Test => "test",
});

/// Schedule for `ptb` seeded by `seed`; the target-vehicle strategy hits `targets`.
pub fn make_schedule(ptb: PtbName, seed: u64, cfg: &Config, targets: &[VehicleId]) -> PerturbationSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = match ptb {
        PtbName::None => PerturbationSchedule::none(),
        PtbName::Rand => PerturbationSchedule::rand(seed),
        PtbName::Time => make_ptb_over_time(&mut rng, cfg.perturbation.window),
        PtbName::Veh => make_ptb_target_vehicles(&mut rng, targets.iter().copied()),
    };
    schedule.with_bound(Some(cfg.epsilon_bound()))
}
