use anyhow::{Context, Result};
use cavsim::dynamics::Action;
use cavsim::harness::{
    evaluate, replay, run_episode, train, Checkpoint, Config, ConstantPolicy, EpisodeLog,
    EpisodeSetup, LearnedPolicy, Mode, Policy, PtbName, ResultsTable, ScenarioName, ScenarioSpec, TrainSetup,
    TABLE_PTBS,
};
use cavsim::marl::Algo;
use cavsim::qp::{solve, QpProblem};
use cavsim::shield::ShieldMode;
use clap::{Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Shielded multi-agent driving: training, evaluation and log replay.
#[derive(Parser)]
#[command(name = "cavsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Srmappo,
    Mappo,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Srmappo => Algo::Srmappo,
            AlgoArg::Mappo => Algo::Mappo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShieldArg {
    Robust,
    Plain,
    Off,
}

impl From<ShieldArg> for ShieldMode {
    fn from(s: ShieldArg) -> Self {
        match s {
            ShieldArg::Robust => ShieldMode::Robust,
            ShieldArg::Plain => ShieldMode::Plain,
            ShieldArg::Off => ShieldMode::Off,
        }
    }
}

/// Scripted actions for `simulate`.
#[derive(Clone, Copy, ValueEnum)]
enum ScriptArg {
    KeepLane,
    Left,
    Right,
    Brake,
    Throttle1,
    Throttle2,
    Throttle3,
    Stop,
}

impl From<ScriptArg> for Action {
    fn from(s: ScriptArg) -> Self {
        match s {
            ScriptArg::KeepLane => Action::KeepLane,
            ScriptArg::Left => Action::ChangeLeft,
            ScriptArg::Right => Action::ChangeRight,
            ScriptArg::Brake => Action::Brake,
            ScriptArg::Throttle1 => Action::Throttle(1),
            ScriptArg::Throttle2 => Action::Throttle(2),
            ScriptArg::Throttle3 => Action::Throttle(3),
            ScriptArg::Stop => Action::EmergencyStop,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per agent; prints one metric record per episode.
    Train {
        #[arg(long, default_value = "highway")]
        scenario: ScenarioName,
        /// Scenario description file; overrides --scenario.
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "srmappo")]
        algo: AlgoArg,
        #[arg(long, value_enum, default_value = "robust")]
        shield: ShieldArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the short episode counts.
        #[arg(long)]
        quick: bool,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Where to write the checkpoint.
        #[arg(long, default_value = "checkpoint.ckpt")]
        out: PathBuf,
        /// Also write the metric records here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint in test mode; prints per-episode records and a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "none")]
        ptb: PtbName,
        /// Defaults to the configured test episode count.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-episode returns as CSV.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Evaluate checkpoints under every perturbation and print the results table.
    Table {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one episode and write its full log.
    Simulate {
        #[arg(long, default_value = "highway")]
        scenario: ScenarioName,
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "robust")]
        shield: ShieldArg,
        #[arg(long, default_value = "none")]
        ptb: PtbName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Drive every agent with a trained policy instead of a script.
        #[arg(long, conflicts_with = "action")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "keep-lane")]
        action: ScriptArg,
        #[arg(long)]
        log: PathBuf,
    },
    /// Re-run a logged episode through the dynamics and compare every state.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Solve a projection problem given as JSON (file or stdin).
    QpDebug {
        problem: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn load_scenario(name: ScenarioName, file: Option<&Path>) -> Result<ScenarioSpec> {
    match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioSpec::from_toml_str(&text).with_context(|| format!("parsing scenario {}", p.display()))
        }
        None => Ok(ScenarioSpec::builtin(name)),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn json_line<W: Write, T: serde::Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::Train {
            scenario,
            scenario_file,
            algo,
            shield,
            seed,
            config,
            quick,
            episodes,
            out: ck_path,
            metrics,
        } => {
            let cfg = load_config(config.as_deref())?;
            let spec = load_scenario(scenario, scenario_file.as_deref())?;
            let episodes = episodes.unwrap_or(cfg.episodes(quick).0);
            let mut metrics_file = metrics.as_deref().map(create).transpose()?;
            let setup = TrainSetup {
                spec: &spec,
                config: &cfg,
                algo: algo.into(),
                shield: shield.into(),
                seed,
                episodes,
            };
            let ck = train(&setup, &mut |m| {
                let line = serde_json::to_string(m)?;
                let write = |w: &mut dyn Write| writeln!(w, "{line}");
                write(&mut out)?;
                if let Some(f) = metrics_file.as_mut() {
                    write(f)?;
                }
                Ok(())
            })
            .context("training failed")?;
            ck.save(&ck_path)
                .with_context(|| format!("writing checkpoint {}", ck_path.display()))?;
            if let Some(mut f) = metrics_file {
                f.flush()?;
            }
        }
        Command::Eval {
            checkpoint,
            ptb,
            episodes,
            seed,
            scatter,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let n = episodes.unwrap_or(ck.config.run.test_episodes);
            let report = evaluate(&ck, ptb, n, seed)?;
            for p in &report.scatter {
                json_line(&mut out, p)?;
            }
            json_line(
                &mut out,
                &serde_json::json!({
                    "scenario": report.scenario,
                    "ptb": report.ptb,
                    "episodes": report.episodes,
                    "collision_free_rate": report.collision_free_rate,
                    "mean_episode_return": report.mean_episode_return,
                }),
            )?;
            if let Some(path) = scatter {
                std::fs::write(&path, report.scatter_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Table {
            checkpoint,
            episodes,
            seed,
            csv,
        } => {
            let mut table = ResultsTable::default();
            for path in &checkpoint {
                let ck = load_checkpoint(path)?;
                let n = episodes.unwrap_or(ck.config.run.test_episodes);
                for ptb in TABLE_PTBS {
                    table.insert(evaluate(&ck, ptb, n, seed)?);
                }
            }
            out.write_all(table.to_text().as_bytes())?;
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Simulate {
            scenario,
            scenario_file,
            mode,
            shield,
            ptb,
            seed,
            config,
            checkpoint,
            action,
            log,
        } => {
            let ck = checkpoint.as_deref().map(load_checkpoint).transpose()?;
            let (cfg, spec) = match &ck {
                Some(ck) => (ck.config.clone(), ck.scenario.clone()),
                None => (load_config(config.as_deref())?, load_scenario(scenario, scenario_file.as_deref())?),
            };
            let mut scripted = ConstantPolicy(action.into());
            let mut learned;
            let policy: &mut dyn Policy = match &ck {
                Some(ck) => {
                    learned = LearnedPolicy {
                        params: &ck.agents,
                        space: cfg.dynamics.action_space(),
                        explore: 0.0,
                        greedy: true,
                    };
                    &mut learned
                }
                None => &mut scripted,
            };
            let setup = EpisodeSetup {
                spec: &spec,
                mode,
                config: &cfg,
                shield: shield.into(),
                ptb,
                seed,
            };
            let result = run_episode(&setup, policy)?;
            let mut f = create(&log)?;
            result.log.write_jsonl(&mut f)?;
            f.flush()?;
            json_line(&mut out, &result.log.summary)?;
        }
        Command::Replay { log } => {
            let f = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let parsed = EpisodeLog::read_jsonl(BufReader::new(f))?;
            let report = replay(&parsed)?;
            json_line(&mut out, &report)?;
        }
        Command::QpDebug { problem } => {
            let mut text = String::new();
            match problem {
                Some(p) => {
                    text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                }
                None => {
                    std::io::stdin().read_to_string(&mut text)?;
                }
            }
            let p = QpProblem::from_json_str(&text)?;
            let sol = solve(&p)?;
            let violation = sol.point().map(|u| p.max_violation(u));
            json_line(
                &mut out,
                &serde_json::json!({ "solution": sol, "max_violation": violation }),
            )?;
        }
    }
    out.flush()?;
    Ok(())
}
