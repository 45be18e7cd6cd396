//! Event-driven server cluster. Decision epochs are job arrivals; the
//! action is the server that receives the job.
//!
//! Servers run jobs concurrently while CPU and memory allow, queue the
//! rest FCFS, start an uninterruptible `t_off` transition to sleep as soon
//! as they go idle and need `t_on` seconds to wake. Transitions draw idle
//! power; sleep draws none.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::traces::{job_trace, JobSpec, JobTraceParams};
use super::{flag, scale, server_power_with, IDLE_POWER_W, PEAK_POWER_W};
use crate::drl::{EpisodeSummary, Environment, Observation, RewardSegment, StepOutcome};
use crate::error::{Error, Result};

const EPS_T: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    pub servers: usize,
    pub group_size: usize,
    pub idle_w: f64,
    pub peak_w: f64,
    pub t_on_s: f64,
    pub t_off_s: f64,
    /// Reward weight per kJ consumed.
    pub w_power: f64,
    /// Reward weight per job-second spent waiting.
    pub w_latency: f64,
    pub trace: JobTraceParams,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            servers: 8,
            group_size: 4,
            idle_w: IDLE_POWER_W,
            peak_w: PEAK_POWER_W,
            t_on_s: 30.0,
            t_off_s: 30.0,
            w_power: 1.0,
            w_latency: 0.01,
            trace: JobTraceParams::default(),
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 || self.group_size == 0 || self.servers % self.group_size != 0 {
            return Err(Error::Config(format!(
                "{} servers cannot be split into groups of {}",
                self.servers, self.group_size
            )));
        }
        if !(self.idle_w >= 0.0 && self.peak_w >= self.idle_w) {
            return Err(Error::Config("server power needs 0 <= idle <= peak".into()));
        }
        if !(self.t_on_s >= 0.0 && self.t_off_s >= 0.0) {
            return Err(Error::Config("transition times must be non-negative".into()));
        }
        if !(self.w_power >= 0.0 && self.w_latency >= 0.0) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        if self.trace.jobs == 0 {
            return Err(Error::Config("job trace must contain jobs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ServerMode {
    Active,
    Sleep,
    Waking { until: f64 },
    Sleeping { until: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Running {
    job: usize,
    end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Server {
    mode: ServerMode,
    queue: VecDeque<usize>,
    running: Vec<Running>,
    cpu: f64,
    mem: f64,
}

impl Server {
    fn asleep() -> Self {
        Server {
            mode: ServerMode::Sleep,
            queue: VecDeque::new(),
            running: Vec::new(),
            cpu: 0.0,
            mem: 0.0,
        }
    }

    pub fn mode(&self) -> ServerMode {
        self.mode
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn running(&self) -> usize {
        self.running.len()
    }

    /// CPU utilization, clamped to `[0, 1]`.
    pub fn utilization(&self) -> f64 {
        self.cpu.clamp(0.0, 1.0)
    }

    fn fits(&self, job: &JobSpec) -> bool {
        self.cpu + job.cpu <= 1.0 + EPS_T && self.mem + job.mem <= 1.0 + EPS_T
    }

    fn next_event(&self) -> f64 {
        let transition = match self.mode {
            ServerMode::Waking { until } | ServerMode::Sleeping { until } => until,
            _ => f64::INFINITY,
        };
        self.running.iter().map(|r| r.end).fold(transition, f64::min)
    }

    fn power(&self, idle: f64, peak: f64) -> f64 {
        match self.mode {
            ServerMode::Sleep => 0.0,
            ServerMode::Active => server_power_with(self.utilization(), idle, peak).expect("clamped utilization"),
            ServerMode::Waking { .. } | ServerMode::Sleeping { .. } => idle,
        }
    }

    /// Raw per-server state: mode flags, CPU and memory use, queue length.
    fn raw(&self) -> [f64; RAW_WIDTH] {
        let m = self.mode;
        [
            flag(m == ServerMode::Active),
            flag(m == ServerMode::Sleep),
            flag(matches!(m, ServerMode::Waking { .. })),
            flag(matches!(m, ServerMode::Sleeping { .. })),
            scale(self.cpu, 0.0, 1.0),
            scale(self.mem, 0.0, 1.0),
            scale(self.queue.len() as f64, 0.0, 4.0),
        ]
    }
}

const RAW_WIDTH: usize = 7;

/// Per-server linear map averaged over the servers of a group. One weight
/// matrix serves every group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEncoder {
    /// `weights[k]` maps the raw server state to output `k`.
    pub weights: Vec<Vec<f64>>,
}

impl GroupEncoder {
    /// Mean pooling of the raw server state.
    pub fn mean_pool() -> Self {
        GroupEncoder {
            weights: (0..RAW_WIDTH)
                .map(|k| (0..RAW_WIDTH).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn output_width(&self) -> usize {
        self.weights.len()
    }

    pub fn encode(&self, group: &[Server]) -> Vec<f64> {
        let n = group.len().max(1) as f64;
        let raws: Vec<[f64; RAW_WIDTH]> = group.iter().map(Server::raw).collect();
        self.weights
            .iter()
            .map(|w| raws.iter().map(|r| w.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>() / n)
            .collect()
    }
}

/// Outcome of one job, available once the episode has run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JobRecord {
    pub arrival_s: f64,
    pub duration_s: f64,
    pub start_s: Option<f64>,
    pub completion_s: Option<f64>,
    pub server: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CloudEnv {
    cfg: CloudConfig,
    encoder: GroupEncoder,
    jobs: Vec<JobSpec>,
    records: Vec<JobRecord>,
    servers: Vec<Server>,
    now: f64,
    next_job: usize,
    energy_j: f64,
    wait_s: f64,
    fixed_trace: Option<Vec<JobSpec>>,
}

impl CloudEnv {
    pub fn new(cfg: CloudConfig) -> Result<Self> {
        cfg.validate()?;
        let servers = vec![Server::asleep(); cfg.servers];
        Ok(CloudEnv {
            cfg,
            encoder: GroupEncoder::mean_pool(),
            jobs: Vec::new(),
            records: Vec::new(),
            servers,
            now: 0.0,
            next_job: 0,
            energy_j: 0.0,
            wait_s: 0.0,
            fixed_trace: None,
        })
    }

    /// Replays `jobs` on every reset instead of generating a trace.
    pub fn with_trace(mut self, jobs: Vec<JobSpec>) -> Result<Self> {
        if jobs.is_empty() {
            return Err(Error::Config("fixed job trace is empty".into()));
        }
        if jobs.windows(2).any(|w| w[1].arrival_s < w[0].arrival_s) {
            return Err(Error::Config("job trace must be sorted by arrival".into()));
        }
        if jobs.iter().any(|j| !(j.duration_s > 0.0 && j.cpu > 0.0 && j.cpu <= 1.0 && j.mem > 0.0 && j.mem <= 1.0)) {
            return Err(Error::Config("job durations must be positive and demands in (0, 1]".into()));
        }
        self.fixed_trace = Some(jobs);
        Ok(self)
    }

    pub fn config(&self) -> &CloudConfig {
        &self.cfg
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn jobs(&self) -> &[JobRecord] {
        &self.records
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn energy_j(&self) -> f64 {
        self.energy_j
    }

    pub fn encoder(&self) -> &GroupEncoder {
        &self.encoder
    }

    pub fn groups(&self) -> usize {
        self.cfg.servers / self.cfg.group_size
    }

    fn group_of(&self, server: usize) -> &[Server] {
        let g = server / self.cfg.group_size;
        &self.servers[g * self.cfg.group_size..(g + 1) * self.cfg.group_size]
    }

    /// Sub-Q input for placing the pending job on `server`: the target
    /// group's encoding, the server's own state, the job and the server's
    /// position within its group.
    pub fn features(&self, server: usize, job: &JobSpec) -> Vec<f64> {
        let s = &self.servers[server];
        let mut f = self.encoder.encode(self.group_of(server));
        f.extend(s.raw());
        let remaining = match s.mode {
            ServerMode::Waking { until } | ServerMode::Sleeping { until } => until - self.now,
            _ => 0.0,
        };
        let full_transition = (self.cfg.t_on_s + self.cfg.t_off_s).max(EPS_T);
        f.push(scale(remaining, 0.0, full_transition));
        f.push(flag(s.mode == ServerMode::Active && s.queue.is_empty() && s.fits(job)));
        f.push(scale(job.cpu, 0.0, 1.0));
        f.push(scale(job.mem, 0.0, 1.0));
        f.push(scale(job.duration_s, 0.0, 2.0 * self.cfg.trace.mean_duration_s.max(EPS_T)));
        let pos = (server % self.cfg.group_size) as f64;
        f.push(scale(pos, 0.0, (self.cfg.group_size.max(2) - 1) as f64));
        f
    }

    pub fn width(&self) -> usize {
        self.encoder.output_width() + RAW_WIDTH + 6
    }

    fn total_power(&self) -> f64 {
        self.servers.iter().map(|s| s.power(self.cfg.idle_w, self.cfg.peak_w)).sum()
    }

    fn waiting(&self) -> usize {
        self.servers.iter().map(|s| s.queue.len()).sum()
    }

    fn busy(&self) -> bool {
        self.servers.iter().any(|s| s.mode != ServerMode::Sleep || !s.queue.is_empty())
    }

    /// Integrates power and waiting up to `t`, appending a reward segment
    /// relative to `epoch`.
    fn integrate(&mut self, t: f64, epoch: f64, segs: &mut Vec<RewardSegment>) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        let e = self.total_power() * dt;
        let w = self.waiting() as f64 * dt;
        self.energy_j += e;
        self.wait_s += w;
        let amount = -(self.cfg.w_power * e / 1000.0 + self.cfg.w_latency * w);
        if amount != 0.0 {
            segs.push(RewardSegment {
                start: self.now - epoch,
                duration: dt,
                amount,
            });
        }
        self.now = t;
    }

    /// Starts queued jobs FCFS while they fit; an idle active server
    /// begins its transition to sleep.
    fn dispatch(&mut self, s: usize) {
        let now = self.now;
        let server = &mut self.servers[s];
        if server.mode != ServerMode::Active {
            return;
        }
        while let Some(&j) = server.queue.front() {
            let job = self.jobs[j];
            if !server.fits(&job) {
                break;
            }
            server.queue.pop_front();
            server.cpu += job.cpu;
            server.mem += job.mem;
            server.running.push(Running {
                job: j,
                end: now + job.duration_s,
            });
            self.records[j].start_s = Some(now);
        }
        if server.running.is_empty() && server.queue.is_empty() {
            server.mode = ServerMode::Sleeping {
                until: now + self.cfg.t_off_s,
            };
        }
    }

    fn handle_events(&mut self, s: usize) {
        let now = self.now;
        let server = &mut self.servers[s];
        match server.mode {
            ServerMode::Waking { until } if until <= now + EPS_T => server.mode = ServerMode::Active,
            ServerMode::Sleeping { until } if until <= now + EPS_T => {
                server.mode = if server.queue.is_empty() {
                    ServerMode::Sleep
                } else {
                    ServerMode::Waking {
                        until: now + self.cfg.t_on_s,
                    }
                };
            }
            _ => {}
        }
        let mut k = 0;
        while k < server.running.len() {
            if server.running[k].end <= now + EPS_T {
                let r = server.running.swap_remove(k);
                let job = self.jobs[r.job];
                server.cpu = (server.cpu - job.cpu).max(0.0);
                server.mem = (server.mem - job.mem).max(0.0);
                self.records[r.job].completion_s = Some(now);
            } else {
                k += 1;
            }
        }
        if server.running.is_empty() {
            server.cpu = 0.0;
            server.mem = 0.0;
        }
        self.dispatch(s);
    }

    /// Processes internal events up to `t` (or until the cluster is fully
    /// asleep when `t` is infinite).
    fn advance_to(&mut self, t: f64, epoch: f64, segs: &mut Vec<RewardSegment>) {
        loop {
            let (next, s) = self
                .servers
                .iter()
                .enumerate()
                .map(|(i, srv)| (srv.next_event(), i))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            if next > t || next.is_infinite() {
                if t.is_finite() {
                    self.integrate(t, epoch, segs);
                }
                return;
            }
            self.integrate(next, epoch, segs);
            self.handle_events(s);
        }
    }

    fn assign(&mut self, server: usize, j: usize) {
        self.records[j].server = Some(server);
        let t_on = self.cfg.t_on_s;
        let now = self.now;
        let srv = &mut self.servers[server];
        srv.queue.push_back(j);
        match srv.mode {
            ServerMode::Sleep => srv.mode = ServerMode::Waking { until: now + t_on },
            ServerMode::Active => self.dispatch(server),
            _ => {}
        }
    }

    /// Mean job latency in seconds over completed jobs.
    pub fn mean_latency(&self) -> f64 {
        let done: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.completion_s.map(|c| c - r.arrival_s))
            .collect();
        if done.is_empty() {
            0.0
        } else {
            done.iter().sum::<f64>() / done.len() as f64
        }
    }
}

impl Environment for CloudEnv {
    fn feature_width(&self) -> usize {
        self.width()
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        self.jobs = match &self.fixed_trace {
            Some(t) => t.clone(),
            None => job_trace(seed, &self.cfg.trace)?,
        };
        self.records = self
            .jobs
            .iter()
            .map(|j| JobRecord {
                arrival_s: j.arrival_s,
                duration_s: j.duration_s,
                start_s: None,
                completion_s: None,
                server: None,
            })
            .collect();
        self.servers = vec![Server::asleep(); self.cfg.servers];
        self.now = 0.0;
        self.next_job = 0;
        self.energy_j = 0.0;
        self.wait_s = 0.0;
        let first = self.jobs[0].arrival_s;
        self.advance_to(first, first, &mut Vec::new());
        Ok(())
    }

    fn observe(&self) -> Option<Observation> {
        let job = self.jobs.get(self.next_job)?;
        Some(Observation {
            time: self.now,
            controllers: vec![(0..self.cfg.servers).map(|s| self.features(s, job)).collect()],
        })
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let j = self.next_job;
        if j >= self.jobs.len() {
            return Err(Error::env("episode is over"));
        }
        let server = *actions.first().ok_or_else(|| Error::env("missing action"))?;
        if server >= self.cfg.servers {
            return Err(Error::env(format!("server {server} does not exist ({} servers)", self.cfg.servers)));
        }
        let epoch = self.now;
        self.assign(server, j);
        self.next_job += 1;
        let mut segs = Vec::new();
        match self.jobs.get(self.next_job) {
            Some(next) => {
                let t = next.arrival_s;
                self.advance_to(t, epoch, &mut segs);
            }
            None => {
                self.advance_to(f64::INFINITY, epoch, &mut segs);
                debug_assert!(!self.busy());
            }
        }
        Ok(StepOutcome { rewards: vec![segs] })
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            steps: self.next_job,
            energy_or_cost: self.energy_j,
            violations: 0.0,
        }
    }

    /// Cyclic assignment over all servers; sleeping ones are woken.
    fn baseline_actions(&self) -> Result<Vec<usize>> {
        Ok(vec![self.next_job % self.cfg.servers])
    }
}
