//! Experiment runner: configuration, metrics sink and the command
//! pipelines behind the CLI.

mod commands;
mod metrics;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use commands::{
    bench_apc, bench_stanh, bench_timing, build_env, compare_sc, evaluate_agent, run, train_agent,
    train_reference_network, AgentCheckpoint, CompareRow, EvalRow, RunOptions, StanhRow, TimingRow,
    TrainOutcome,
};
pub use metrics::{MetricsRow, MetricsSink};

use crate::drl::{AgentConfig, Discounting};
use crate::envs::traces::{JobTraceParams, WeatherParams};
use crate::envs::{CloudConfig, GridConfig, HvacConfig};
use crate::error::{Error, Result};
use crate::ref_network::TrainConfig;
use crate::sc_network::{LayerRelay, PipelineConfig};
use crate::sc_units::ApcVariant;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BenchApc,
    BenchStanh,
    BenchTiming,
    CompareSc,
    Train,
    Evaluate,
    GenTraces,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::BenchApc,
        Command::BenchStanh,
        Command::BenchTiming,
        Command::CompareSc,
        Command::Train,
        Command::Evaluate,
        Command::GenTraces,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::BenchApc => "bench-apc",
            Command::BenchStanh => "bench-stanh",
            Command::BenchTiming => "bench-timing",
            Command::CompareSc => "compare-sc",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::GenTraces => "gen-traces",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchApcConfig {
    pub variants: Vec<ApcVariant>,
    pub n_inputs: Vec<usize>,
    pub lengths: Vec<usize>,
    pub trials: usize,
}

impl Default for BenchApcConfig {
    fn default() -> Self {
        BenchApcConfig {
            variants: vec![ApcVariant::Original, ApcVariant::Improved],
            n_inputs: vec![26, 30],
            lengths: vec![256, 512, 1024],
            trials: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchStanhConfig {
    pub states: Vec<u32>,
    pub lengths: Vec<usize>,
    pub xs: Vec<f64>,
}

impl Default for BenchStanhConfig {
    fn default() -> Self {
        BenchStanhConfig {
            states: vec![16],
            lengths: vec![1024],
            xs: (-4..=4).map(|k| k as f64 / 5.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchTimingConfig {
    pub lengths: Vec<usize>,
    pub pipelines: Vec<PipelineConfig>,
}

impl Default for BenchTimingConfig {
    fn default() -> Self {
        BenchTimingConfig {
            lengths: vec![256, 512, 1024],
            pipelines: vec![PipelineConfig::pipelined(), PipelineConfig::non_pipelined()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareScConfig {
    pub widths: Vec<usize>,
    pub lengths: Vec<usize>,
    pub apc: ApcVariant,
    pub relay: LayerRelay,
    /// Random state-action inputs compared per length.
    pub samples: usize,
    /// Weight file to compare; a reference network is trained when absent.
    pub weights: Option<PathBuf>,
    pub train_samples: usize,
    pub train: TrainConfig,
}

impl Default for CompareScConfig {
    fn default() -> Self {
        CompareScConfig {
            widths: vec![26, 30, 1],
            lengths: vec![256, 1024],
            apc: ApcVariant::Improved,
            relay: LayerRelay::Direct,
            samples: 100,
            weights: None,
            train_samples: 2000,
            train: TrainConfig {
                learning_rate: 0.05,
                batch_size: 32,
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Cloud(CloudConfig),
    Grid(GridConfig),
    Hvac(HvacConfig),
    /// The 3-state MDP used as a correctness oracle.
    Toy { horizon: usize },
}

impl EnvConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Cloud(_) => "cloud",
            EnvConfig::Grid(_) => "grid",
            EnvConfig::Hvac(_) => "hvac",
            EnvConfig::Toy { .. } => "toy",
        }
    }

    /// Unit of the episode's `energy_or_cost` figure.
    pub fn cost_units(&self) -> &'static str {
        match self {
            EnvConfig::Cloud(_) => "J",
            EnvConfig::Grid(_) | EnvConfig::Hvac(_) => "$",
            EnvConfig::Toy { .. } => "neg_reward",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Cloud(c) => c.validate(),
            EnvConfig::Grid(c) => c.validate(),
            EnvConfig::Hvac(c) => c.validate(),
            EnvConfig::Toy { horizon: 0 } => Err(Error::Config("toy horizon must be positive".into())),
            EnvConfig::Toy { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlConfig {
    pub env: EnvConfig,
    /// Environment for evaluation episodes; defaults to `env`.
    pub eval_env: Option<EnvConfig>,
    pub agent: AgentConfig,
    pub offline_episodes: usize,
    pub online_episodes: usize,
    pub eval_episodes: usize,
    /// Checkpoint read by `evaluate`; defaults to `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for DrlConfig {
    fn default() -> Self {
        DrlConfig::grid()
    }
}

fn agent(discount: Discounting, rho: f64, hidden: Vec<usize>) -> AgentConfig {
    AgentConfig {
        discount,
        rho,
        hidden,
        train: TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 1,
            ..TrainConfig::default()
        },
        refresh_batches: 100,
        offline_batches: 200,
        ..AgentConfig::default()
    }
}

impl DrlConfig {
    /// Job placement on 8 servers; 200 training episodes of 100 jobs.
    pub fn cloud() -> Self {
        DrlConfig {
            env: EnvConfig::Cloud(CloudConfig::default()),
            eval_env: None,
            agent: agent(Discounting::Continuous { beta: 0.005 }, 100.0, vec![16]),
            offline_episodes: 20,
            online_episodes: 180,
            eval_episodes: 3,
            checkpoint: None,
        }
    }

    /// 100-task day with a 26-26-1 network.
    pub fn grid() -> Self {
        DrlConfig {
            env: EnvConfig::Grid(GridConfig::default()),
            eval_env: None,
            agent: agent(Discounting::Discrete { gamma: 0.5 }, 5.0, vec![26]),
            offline_episodes: 20,
            online_episodes: 80,
            eval_episodes: 3,
            checkpoint: None,
        }
    }

    /// One zone, trained on single days and evaluated over ten.
    pub fn hvac() -> Self {
        DrlConfig {
            env: EnvConfig::Hvac(HvacConfig::default()),
            eval_env: Some(EnvConfig::Hvac(HvacConfig {
                days: 10,
                ..HvacConfig::default()
            })),
            agent: agent(Discounting::Discrete { gamma: 0.9 }, 5.0, vec![16]),
            offline_episodes: 20,
            online_episodes: 100,
            eval_episodes: 3,
            checkpoint: None,
        }
    }

    pub fn toy() -> Self {
        DrlConfig {
            env: EnvConfig::Toy { horizon: 30 },
            eval_env: None,
            agent: AgentConfig {
                discount: Discounting::Discrete { gamma: 0.5 },
                rho: 2.0,
                hidden: vec![4],
                memory_capacity: 5000,
                train: TrainConfig {
                    learning_rate: 0.1,
                    batch_size: 32,
                    epochs: 1,
                    ..TrainConfig::default()
                },
                refresh_batches: 50,
                offline_batches: 100,
                ..AgentConfig::default()
            },
            offline_episodes: 20,
            online_episodes: 100,
            eval_episodes: 3,
            checkpoint: None,
        }
    }

    pub fn eval_env(&self) -> &EnvConfig {
        self.eval_env.as_ref().unwrap_or(&self.env)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if let Some(e) = &self.eval_env {
            e.validate()?;
            if e.kind() != self.env.kind() {
                return Err(Error::Config(format!(
                    "evaluation environment {} differs from training environment {}",
                    e.kind(),
                    self.env.kind()
                )));
            }
        }
        self.agent.validate()?;
        if self.offline_episodes == 0 {
            return Err(Error::Config("offline_episodes must be at least 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub jobs: JobTraceParams,
    pub task_sets: Vec<usize>,
    pub slots: usize,
    pub weather: WeatherParams,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            jobs: JobTraceParams::default(),
            task_sets: vec![100, 300, 500],
            slots: 24,
            weather: WeatherParams::default(),
        }
    }
}

/// Top-level experiment file. Every section has defaults; only `version`
/// is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// When set, the command this file is meant for.
    #[serde(default)]
    pub command: Option<Command>,
    /// Run identifier in metrics rows; defaults to the command name.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bench_apc: BenchApcConfig,
    #[serde(default)]
    pub bench_stanh: BenchStanhConfig,
    #[serde(default)]
    pub bench_timing: BenchTimingConfig,
    #[serde(default)]
    pub compare_sc: CompareScConfig,
    #[serde(default)]
    pub drl: DrlConfig,
    #[serde(default)]
    pub traces: TraceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            command: None,
            run_id: None,
            seed: 0,
            bench_apc: BenchApcConfig::default(),
            bench_stanh: BenchStanhConfig::default(),
            bench_timing: BenchTimingConfig::default(),
            compare_sc: CompareScConfig::default(),
            drl: DrlConfig::default(),
            traces: TraceConfig::default(),
        }
    }
}

fn non_empty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let a = &self.bench_apc;
        non_empty("bench_apc.variants", &a.variants)?;
        non_empty("bench_apc.n_inputs", &a.n_inputs)?;
        non_empty("bench_apc.lengths", &a.lengths)?;
        if a.trials < 100 || a.n_inputs.contains(&0) || a.lengths.contains(&0) {
            return Err(Error::Config("bench_apc needs >= 100 trials and positive sizes".into()));
        }
        let s = &self.bench_stanh;
        non_empty("bench_stanh.states", &s.states)?;
        non_empty("bench_stanh.lengths", &s.lengths)?;
        non_empty("bench_stanh.xs", &s.xs)?;
        if s.states.iter().any(|&k| k < 2 || k % 2 != 0) {
            return Err(Error::Config("bench_stanh.states must be even and >= 2".into()));
        }
        if s.xs.iter().any(|x| !(-1.0..=1.0).contains(x)) || s.lengths.contains(&0) {
            return Err(Error::Config("bench_stanh.xs must lie in [-1, 1] and lengths be positive".into()));
        }
        let t = &self.bench_timing;
        non_empty("bench_timing.lengths", &t.lengths)?;
        non_empty("bench_timing.pipelines", &t.pipelines)?;
        for p in &t.pipelines {
            p.validate()?;
        }
        if t.lengths.contains(&0) {
            return Err(Error::Config("bench_timing.lengths must be positive".into()));
        }
        let c = &self.compare_sc;
        non_empty("compare_sc.lengths", &c.lengths)?;
        if c.widths.len() < 2 || c.widths.contains(&0) || c.samples == 0 || c.lengths.contains(&0) {
            return Err(Error::Config("compare_sc needs >= 2 positive widths, samples and lengths".into()));
        }
        c.train.validate()?;
        self.drl.validate()?;
        let tr = &self.traces;
        if tr.task_sets.contains(&0) {
            return Err(Error::Config("traces.task_sets must be positive".into()));
        }
        Ok(())
    }

    /// Checks that a command-specific file is used with its command.
    pub fn check_command(&self, cmd: Command) -> Result<()> {
        match self.command {
            Some(c) if c != cmd => Err(Error::Config(format!("config is for `{c}`, not `{cmd}`"))),
            _ => Ok(()),
        }
    }

    pub fn run_id(&self, cmd: Command) -> String {
        self.run_id.clone().unwrap_or_else(|| cmd.name().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_json(r#"{"version": 1, "sed": 3}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "drl": {"env": {"kind": "grid", "slotz": 3}}}"#).is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = ExperimentConfig::from_json("{\n  \"version\": 1,\n  \"seed\": x\n}").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn version_checked() {
        assert!(ExperimentConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{}"#).is_err());
    }

    #[test]
    fn env_sections_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"version": 1, "drl": {"env": {"kind": "hvac", "days": 2}, "online_episodes": 3}}"#,
        )
        .unwrap();
        match &cfg.drl.env {
            EnvConfig::Hvac(h) => assert_eq!(h.days, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.drl.online_episodes, 3);
        let text = cfg.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn presets_validate() {
        for d in [DrlConfig::cloud(), DrlConfig::grid(), DrlConfig::hvac(), DrlConfig::toy()] {
            d.validate().unwrap();
        }
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        let cfg = ExperimentConfig {
            command: Some(Command::Train),
            ..ExperimentConfig::default()
        };
        assert!(cfg.check_command(Command::Train).is_ok());
        assert!(cfg.check_command(Command::BenchApc).is_err());
    }
}
