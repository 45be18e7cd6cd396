use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{write_rows, write_text, MetricsRow, MetricsSink};
use super::{
    BenchApcConfig, BenchStanhConfig, BenchTimingConfig, Command, CompareScConfig, DrlConfig, EnvConfig,
    ExperimentConfig, TraceConfig,
};
use crate::bitstream::{encode, Encoding, SngConfig};
use crate::drl::{run_baseline, DqnAgent, EpisodeMetrics, Environment, ToyMdp, ToyMdpEnv};
use crate::envs::traces::{job_trace, task_set, weather_profile, write_csv};
use crate::envs::{CloudEnv, GridEnv, HvacEnv};
use crate::error::{Error, Result};
use crate::ref_network::{NetworkSpec, SeedBlock, WeightFile, WeightSet};
use crate::sc_network::{ScConfig, ScNetwork, TimingReport};
use crate::sc_units::{apc_inaccuracy, render_apc_report, stanh, ApcBenchRow, ApcDesign};
use crate::seed::{child_seed, labelled_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides the config's root seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Also run the environment's reference policy on the evaluation seeds.
    pub baseline: bool,
}

/// Runs `cmd`, writing its CSV files, `metrics.csv` and `summary.txt`
/// under `opts.out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    cfg.check_command(cmd)?;
    std::fs::create_dir_all(&opts.out)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let out = opts.out.as_path();
    let mut sink = MetricsSink::create(&out.join("metrics.csv"), &cfg.run_id(cmd), seed)?;
    match cmd {
        Command::BenchApc => run_bench_apc(&cfg.bench_apc, seed, out, &mut sink)?,
        Command::BenchStanh => run_bench_stanh(&cfg.bench_stanh, seed, out, &mut sink)?,
        Command::BenchTiming => run_bench_timing(&cfg.bench_timing, out, &mut sink)?,
        Command::CompareSc => run_compare_sc(&cfg.compare_sc, seed, out, &mut sink)?,
        Command::Train => run_train(&cfg.drl, seed, opts.baseline, out, &mut sink)?,
        Command::Evaluate => run_evaluate(&cfg.drl, seed, opts.baseline, out, &mut sink)?,
        Command::GenTraces => run_gen_traces(&cfg.traces, seed, out, &mut sink)?,
    }
    let rows = sink.finish()?;
    let mut summary = format!("command: {cmd}\nrun_id: {}\nseed: {seed}\n", cfg.run_id(cmd));
    for r in &rows {
        summary += &format!("{} = {} {}\n", r.metric, r.value, r.units);
    }
    write_text(&out.join("summary.txt"), &summary)?;
    Ok(rows)
}

/// Inaccuracy for every (variant, inputs, length) cell, in that nesting order.
pub fn bench_apc(cfg: &BenchApcConfig, seed: u64) -> Result<Vec<ApcBenchRow>> {
    let root = labelled_seed(seed, "bench-apc");
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        for &n in &cfg.n_inputs {
            let design = ApcDesign::new(n, variant)?;
            for &len in &cfg.lengths {
                let mut rng = rng_from(child_seed(root, rows.len() as u64));
                let rate = apc_inaccuracy(&design, len, cfg.trials, &mut rng)?;
                rows.push(ApcBenchRow {
                    variant: variant.to_string(),
                    n_inputs: n,
                    len,
                    trials: cfg.trials,
                    inaccuracy_pct: 100.0 * rate,
                });
            }
        }
    }
    Ok(rows)
}

fn run_bench_apc(cfg: &BenchApcConfig, seed: u64, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let rows = bench_apc(cfg, seed)?;
    write_text(&out.join("bench_apc.csv"), &render_apc_report(&rows)?)?;
    for r in &rows {
        sink.add(format!("inaccuracy/{}/n{}/L{}", r.variant, r.n_inputs, r.len), r.inaccuracy_pct, "%")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StanhRow {
    #[serde(rename = "K")]
    pub states: u32,
    #[serde(rename = "L")]
    pub len: usize,
    pub x: f64,
    pub decoded: f64,
    /// `tanh(K x / 2)`.
    pub reference: f64,
    pub abs_err: f64,
}

pub fn bench_stanh(cfg: &BenchStanhConfig, seed: u64) -> Result<Vec<StanhRow>> {
    let root = labelled_seed(seed, "bench-stanh");
    let mut rows = Vec::new();
    for &k in &cfg.states {
        for &len in &cfg.lengths {
            for &x in &cfg.xs {
                let s = child_seed(root, rows.len() as u64) % 0xffff + 1;
                let input = encode(x, len, Encoding::Bipolar, &SngConfig::lfsr(16, s))?;
                let decoded = stanh(&input, k)?.decode();
                let reference = (k as f64 / 2.0 * x).tanh();
                rows.push(StanhRow {
                    states: k,
                    len,
                    x,
                    decoded,
                    reference,
                    abs_err: (decoded - reference).abs(),
                });
            }
        }
    }
    Ok(rows)
}

fn run_bench_stanh(cfg: &BenchStanhConfig, seed: u64, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let rows = bench_stanh(cfg, seed)?;
    write_rows(&out.join("bench_stanh.csv"), &rows)?;
    for &k in &cfg.states {
        for &len in &cfg.lengths {
            let worst = rows
                .iter()
                .filter(|r| r.states == k && r.len == len)
                .map(|r| r.abs_err)
                .fold(0.0, f64::max);
            sink.add(format!("max_abs_err/K{k}/L{len}"), worst, "")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRow {
    #[serde(rename = "L")]
    pub len: usize,
    pub pipelined: bool,
    pub clock_ns: f64,
    pub fill_ns: f64,
    pub delay_ns: f64,
    pub throughput_per_ns: f64,
}

pub fn bench_timing(cfg: &BenchTimingConfig) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for p in &cfg.pipelines {
        for &len in &cfg.lengths {
            let r = TimingReport::new(len, p)?;
            rows.push(TimingRow {
                len,
                pipelined: r.pipelined,
                clock_ns: p.clock_ns,
                fill_ns: p.fill_ns,
                delay_ns: r.delay_ns,
                throughput_per_ns: r.throughput,
            });
        }
    }
    Ok(rows)
}

fn run_bench_timing(cfg: &BenchTimingConfig, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let rows = bench_timing(cfg)?;
    write_rows(&out.join("bench_timing.csv"), &rows)?;
    for r in &rows {
        let mode = if r.pipelined { "pipelined" } else { "non_pipelined" };
        sink.add(format!("delay/{mode}/clk{}/L{}", r.clock_ns, r.len), r.delay_ns, "ns")?;
    }
    Ok(())
}

/// Trains a tanh network of the configured shape, with bias, on a smooth
/// synthetic Q-like target `-0.5 + 0.4 tanh(a . x / (0.6 sqrt(n)))` over
/// inputs uniform in `[-1, 1]`.
pub fn train_reference_network(cfg: &CompareScConfig, seed: u64) -> Result<WeightSet> {
    if cfg.widths.last() != Some(&1) {
        return Err(Error::Config("reference network needs a single output".into()));
    }
    let mut rng = rng_from(labelled_seed(seed, "reference-net"));
    let spec = NetworkSpec::new(&cfg.widths).with_bias(true);
    let mut ws = WeightSet::random(&spec, &mut rng)?;
    let n = cfg.widths[0];
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = 0.6 * (n as f64).sqrt();
    let data: Vec<(Vec<f64>, f64)> = (0..cfg.train_samples.max(1))
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let dot: f64 = x.iter().zip(&a).map(|(x, a)| x * a).sum();
            (x, -0.5 + 0.4 * (dot / norm).tanh())
        })
        .collect();
    ws.fit(&data, &cfg.train, &mut rng)?;
    Ok(ws)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    #[serde(rename = "L")]
    pub len: usize,
    pub apc: String,
    pub samples: usize,
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
}

/// Mean and max `|q_sc - q_exact|` over random inputs for each length.
pub fn compare_sc(ws: &WeightSet, cfg: &CompareScConfig, sc_root: u64, seed: u64) -> Result<Vec<CompareRow>> {
    let n = ws.spec.inputs();
    let mut rng = rng_from(labelled_seed(seed, "compare-inputs"));
    let inputs: Vec<Vec<f64>> = (0..cfg.samples)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let exact: Vec<f64> = inputs.iter().map(|x| ws.forward(x)).collect::<Result<_>>()?;
    cfg.lengths
        .iter()
        .map(|&len| {
            let sc_cfg = ScConfig {
                apc: cfg.apc,
                relay: cfg.relay,
                ..ScConfig::new(len, sc_root)
            };
            let net = ScNetwork::build(ws, sc_cfg)?;
            let errs: Vec<f64> = inputs
                .iter()
                .zip(&exact)
                .map(|(x, q)| Ok((net.forward_values(x)?[0] - q).abs()))
                .collect::<Result<_>>()?;
            Ok(CompareRow {
                len,
                apc: cfg.apc.to_string(),
                samples: cfg.samples,
                mean_abs_err: errs.iter().sum::<f64>() / errs.len() as f64,
                max_abs_err: errs.iter().cloned().fold(0.0, f64::max),
            })
        })
        .collect()
}

fn run_compare_sc(cfg: &CompareScConfig, seed: u64, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let (ws, root) = match &cfg.weights {
        Some(path) => {
            let file = WeightFile::load(path)?;
            (file.to_weights()?, file.seeds.root)
        }
        None => {
            let ws = train_reference_network(cfg, seed)?;
            let root = labelled_seed(seed, "sc-streams");
            WeightFile::from_weights(&ws, SeedBlock { root })?.save(&out.join("network.json"))?;
            (ws, root)
        }
    };
    let rows = compare_sc(&ws, cfg, root, seed)?;
    write_rows(&out.join("compare_sc.csv"), &rows)?;
    for r in &rows {
        sink.add(format!("mean_abs_err/{}/L{}", r.apc, r.len), r.mean_abs_err, "")?;
        sink.add(format!("max_abs_err/{}/L{}", r.apc, r.len), r.max_abs_err, "")?;
    }
    Ok(())
}

pub fn build_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    Ok(match cfg {
        EnvConfig::Cloud(c) => Box::new(CloudEnv::new(c.clone())?),
        EnvConfig::Grid(c) => Box::new(GridEnv::new(c.clone())?),
        EnvConfig::Hvac(c) => Box::new(HvacEnv::new(c.clone())?),
        EnvConfig::Toy { horizon } => Box::new(ToyMdpEnv::new(ToyMdp::three_state(), *horizon)?),
    })
}

/// Episode metrics tagged with the training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub phase: &'static str,
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub mean_abs_dq: f64,
    pub energy_or_cost: f64,
    pub violations: f64,
    pub epsilon: f64,
}

impl EpisodeRow {
    fn new(phase: &'static str, m: &EpisodeMetrics) -> Self {
        EpisodeRow {
            phase,
            episode: m.episode,
            steps: m.steps,
            episode_return: m.episode_return,
            mean_abs_dq: m.mean_abs_dq,
            energy_or_cost: m.energy_or_cost,
            violations: m.violations,
            epsilon: m.epsilon,
        }
    }
}

pub struct TrainOutcome {
    pub agent: DqnAgent,
    pub episodes: Vec<EpisodeRow>,
}

/// Offline construction followed by online episodes, all seeded from `seed`.
pub fn train_agent(cfg: &DrlConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = build_env(&cfg.env)?;
    let mut agent = DqnAgent::new(
        cfg.agent.clone(),
        env.feature_width(),
        env.controllers(),
        labelled_seed(seed, "agent"),
    )?;
    let mut episodes: Vec<EpisodeRow> = agent
        .offline_construct(env.as_mut(), cfg.offline_episodes, labelled_seed(seed, "offline"))?
        .iter()
        .map(|m| EpisodeRow::new("offline", m))
        .collect();
    let online = labelled_seed(seed, "online");
    for ep in 0..cfg.online_episodes {
        let m = agent.online_episode(env.as_mut(), child_seed(online, ep as u64), ep)?;
        episodes.push(EpisodeRow::new("online", &m));
    }
    Ok(TrainOutcome { agent, episodes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub episode_seed: u64,
    pub policy: &'static str,
    pub steps: usize,
    pub energy_or_cost: f64,
    pub violations: f64,
}

/// Greedy episodes on the evaluation seeds, optionally paired with the
/// baseline on the same seeds.
pub fn evaluate_agent(agent: &mut DqnAgent, cfg: &DrlConfig, seed: u64, baseline: bool) -> Result<Vec<EvalRow>> {
    let mut env = build_env(cfg.eval_env())?;
    let root = labelled_seed(seed, "eval");
    let mut rows = Vec::new();
    for k in 0..cfg.eval_episodes {
        let s = child_seed(root, k as u64);
        let m = agent.evaluate(env.as_mut(), s)?;
        rows.push(EvalRow {
            episode_seed: s,
            policy: "drl",
            steps: m.steps,
            energy_or_cost: m.energy_or_cost,
            violations: m.violations,
        });
        if baseline {
            let b = run_baseline(env.as_mut(), s)?;
            rows.push(EvalRow {
                episode_seed: s,
                policy: "baseline",
                steps: b.steps,
                energy_or_cost: b.energy_or_cost,
                violations: b.violations,
            });
        }
    }
    Ok(rows)
}

/// Trained networks of every controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub env: String,
    pub feature_width: usize,
    /// Both estimators of each controller.
    pub controllers: Vec<[WeightFile; 2]>,
}

impl AgentCheckpoint {
    pub fn from_agent(agent: &DqnAgent, env: &EnvConfig, feature_width: usize, controllers: usize) -> Result<Self> {
        let controllers = (0..controllers)
            .map(|c| {
                let [a, b] = agent.networks(c);
                Ok([
                    WeightFile::from_weights(a, SeedBlock::default())?,
                    WeightFile::from_weights(b, SeedBlock::default())?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentCheckpoint {
            version: 1,
            env: env.kind().to_string(),
            feature_width,
            controllers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Agent for `cfg` carrying these networks.
    pub fn to_agent(&self, cfg: &DrlConfig, seed: u64) -> Result<DqnAgent> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.env != cfg.env.kind() {
            return Err(Error::Config(format!(
                "checkpoint is for {}, config selects {}",
                self.env,
                cfg.env.kind()
            )));
        }
        let mut agent = DqnAgent::new(
            cfg.agent.clone(),
            self.feature_width,
            self.controllers.len(),
            labelled_seed(seed, "agent"),
        )?;
        for (c, [a, b]) in self.controllers.iter().enumerate() {
            let (a, b) = (a.to_weights()?, b.to_weights()?);
            let expect = &agent.network(c).spec.widths;
            if &a.spec.widths != expect || &b.spec.widths != expect {
                return Err(Error::Config(format!(
                    "checkpoint network {:?} does not match the agent's {expect:?}",
                    a.spec.widths
                )));
            }
            agent.set_networks(c, [a, b]);
        }
        Ok(agent)
    }
}

fn record_eval(rows: &[EvalRow], env: &EnvConfig, sink: &mut MetricsSink) -> Result<()> {
    let units = env.cost_units();
    let mean = |policy: &str, f: fn(&EvalRow) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.policy == policy).map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let drl = mean("drl", |r| r.energy_or_cost).expect("evaluation rows");
    sink.add("eval/drl/mean_energy_or_cost", drl, units)?;
    sink.add("eval/drl/mean_violation_rate", mean("drl", |r| r.violations).unwrap_or(0.0), "")?;
    if let Some(base) = mean("baseline", |r| r.energy_or_cost) {
        sink.add("eval/baseline/mean_energy_or_cost", base, units)?;
        sink.add(
            "eval/baseline/mean_violation_rate",
            mean("baseline", |r| r.violations).unwrap_or(0.0),
            "",
        )?;
        sink.add("eval/drl_minus_baseline", drl - base, units)?;
        if base != 0.0 {
            sink.add("eval/reduction_pct", 100.0 * (1.0 - drl / base), "%")?;
        }
    }
    Ok(())
}

fn run_train(cfg: &DrlConfig, seed: u64, baseline: bool, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let TrainOutcome { mut agent, episodes } = train_agent(cfg, seed)?;
    write_rows(&out.join("episodes.csv"), &episodes)?;
    let env = build_env(&cfg.env)?;
    AgentCheckpoint::from_agent(&agent, &cfg.env, env.feature_width(), env.controllers())?
        .save(&out.join("checkpoint.json"))?;
    sink.add("train/episodes", episodes.len() as f64, "")?;
    if let Some(last) = episodes.iter().rev().find(|e| e.phase == "online") {
        sink.add("train/last_online_mean_abs_dq", last.mean_abs_dq, "")?;
        sink.add("train/last_online_energy_or_cost", last.energy_or_cost, cfg.env.cost_units())?;
    }
    let rows = evaluate_agent(&mut agent, cfg, seed, baseline)?;
    write_rows(&out.join("eval.csv"), &rows)?;
    record_eval(&rows, cfg.eval_env(), sink)
}

fn run_evaluate(cfg: &DrlConfig, seed: u64, baseline: bool, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
    let mut agent = AgentCheckpoint::load(&path)?.to_agent(cfg, seed)?;
    let width = build_env(cfg.eval_env())?.feature_width();
    if width != agent.network(0).spec.inputs() {
        return Err(Error::Config(format!(
            "checkpoint takes {} features, environment provides {width}",
            agent.network(0).spec.inputs()
        )));
    }
    let rows = evaluate_agent(&mut agent, cfg, seed, baseline)?;
    write_rows(&out.join("eval.csv"), &rows)?;
    record_eval(&rows, cfg.eval_env(), sink)
}

fn run_gen_traces(cfg: &TraceConfig, seed: u64, out: &Path, sink: &mut MetricsSink) -> Result<()> {
    let jobs = job_trace(labelled_seed(seed, "jobs"), &cfg.jobs)?;
    write_csv(&out.join("jobs.csv"), &jobs)?;
    sink.add("jobs", jobs.len() as f64, "")?;
    sink.add("jobs/last_arrival", jobs.last().map_or(0.0, |j| j.arrival_s), "s")?;
    for &n in &cfg.task_sets {
        let tasks = task_set(child_seed(labelled_seed(seed, "tasks"), n as u64), n, cfg.slots)?;
        write_csv(&out.join(format!("tasks_{n}.csv")), &tasks)?;
        sink.add(format!("tasks_{n}/energy"), tasks.iter().map(|t| t.kw * t.dur as f64).sum(), "kWh")?;
    }
    let weather = weather_profile(labelled_seed(seed, "weather"), &cfg.weather)?;
    write_csv(&out.join("weather.csv"), &weather)?;
    sink.add("weather/slots", weather.len() as f64, "")?;
    sink.add(
        "weather/pv_energy",
        weather.iter().map(|s| s.pv_kw).sum::<f64>() * 24.0 / cfg.weather.slots_per_day as f64,
        "kWh",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sc_network::PipelineConfig;
    use crate::sc_units::ApcVariant;

    #[test]
    fn bench_apc_grid_has_twelve_cells() {
        let cfg = BenchApcConfig {
            trials: 100,
            lengths: vec![64, 128, 256],
            ..BenchApcConfig::default()
        };
        let rows = bench_apc(&cfg, 1).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].variant, ApcVariant::Original.to_string());
        assert_eq!((rows[11].n_inputs, rows[11].len), (30, 256));
    }

    #[test]
    fn timing_rows() {
        let cfg = BenchTimingConfig {
            pipelines: vec![PipelineConfig::pipelined()],
            ..BenchTimingConfig::default()
        };
        let d: Vec<f64> = bench_timing(&cfg).unwrap().iter().map(|r| r.delay_ns).collect();
        assert_eq!(d, vec![261.12, 522.24, 1044.48]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = DrlConfig {
            offline_episodes: 2,
            online_episodes: 1,
            ..DrlConfig::toy()
        };
        let TrainOutcome { agent, episodes } = train_agent(&cfg, 3).unwrap();
        assert_eq!(episodes.len(), 3);
        let ck = AgentCheckpoint::from_agent(&agent, &cfg.env, 3, 1).unwrap();
        let restored = ck.to_agent(&cfg, 3).unwrap();
        for f in [vec![1.0, -1.0, 1.0], vec![-1.0, -1.0, -1.0]] {
            assert_eq!(restored.network(0).forward(&f).unwrap(), agent.network(0).forward(&f).unwrap());
        }
        let wrong = DrlConfig {
            env: EnvConfig::Toy { horizon: 5 },
            agent: crate::drl::AgentConfig {
                hidden: vec![3],
                ..cfg.agent.clone()
            },
            ..cfg
        };
        assert!(ck.to_agent(&wrong, 3).is_err());
    }
}
