use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scdrl_core::harness::{run, Command, DrlConfig, ExperimentConfig, RunOptions};
use scdrl_core::Error;

#[derive(Parser)]
#[command(name = "scdrl", version, about = "Stochastic-computing DRL experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// APC inaccuracy over variants, input counts and stream lengths.
    BenchApc(Common),
    /// Stanh decoded value against tanh(Kx/2).
    BenchStanh(Common),
    /// Per-inference latency for pipelined and non-pipelined clocks.
    BenchTiming(Common),
    /// SC network output against the floating-point reference.
    CompareSc(Common),
    /// Offline construction, online training and evaluation.
    Train(Drl),
    /// Evaluates a saved checkpoint.
    Evaluate(Drl),
    /// Writes job, task and weather traces.
    GenTraces(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Drl {
    #[command(flatten)]
    common: Common,
    /// Replaces the `drl` section with a built-in preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Also evaluate the baseline policy on the same episodes.
    #[arg(long)]
    baseline: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Cloud,
    Grid,
    Hvac,
    Toy,
}

impl Preset {
    fn config(self) -> DrlConfig {
        match self {
            Preset::Cloud => DrlConfig::cloud(),
            Preset::Grid => DrlConfig::grid(),
            Preset::Hvac => DrlConfig::hvac(),
            Preset::Toy => DrlConfig::toy(),
        }
    }
}

fn execute(cli: Cli) -> scdrl_core::Result<()> {
    let (cmd, common, preset, baseline) = match cli.command {
        Cmd::BenchApc(c) => (Command::BenchApc, c, None, false),
        Cmd::BenchStanh(c) => (Command::BenchStanh, c, None, false),
        Cmd::BenchTiming(c) => (Command::BenchTiming, c, None, false),
        Cmd::CompareSc(c) => (Command::CompareSc, c, None, false),
        Cmd::GenTraces(c) => (Command::GenTraces, c, None, false),
        Cmd::Train(d) => (Command::Train, d.common, d.preset, d.baseline),
        Cmd::Evaluate(d) => (Command::Evaluate, d.common, d.preset, d.baseline),
    };
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = preset {
        let checkpoint = cfg.drl.checkpoint.take();
        cfg.drl = DrlConfig { checkpoint, ..p.config() };
    }
    let opts = RunOptions {
        seed: common.seed,
        out: common.out,
        baseline,
    };
    let rows = run(cmd, &cfg, &opts)?;
    for r in &rows {
        println!("{} = {} {}", r.metric, r.value, r.units);
    }
    println!("wrote {}", opts.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
