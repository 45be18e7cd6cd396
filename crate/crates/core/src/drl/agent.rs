//! DNN-backed Q agent: offline construction from simulated traces, online
//! ε-greedy control with per-epoch Q updates, and mini-batch refresh of
//! the network at the end of every execution sequence.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    annealed_epsilon, argmax, bellman_target, select_action, Discounting, Experience, ReplayMemory,
    RewardSegment,
};
use crate::error::{Error, Result};
use crate::ref_network::{NetworkSpec, TrainConfig, WeightSet};
use crate::seed::{child_seed, labelled_seed, rng_from};

/// The decision a controller faces at one epoch: a feature vector for
/// every admissible action.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: f64,
    /// `controllers[c][a]` is the feature vector of action `a` for controller `c`.
    pub controllers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Reward segments per controller, measured from the epoch time.
    pub rewards: Vec<Vec<RewardSegment>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    /// Energy (J) or money, depending on the environment.
    pub energy_or_cost: f64,
    pub violations: f64,
}

/// Control problem driven by the agent.
pub trait Environment {
    /// Independent controllers acting at every epoch (one per HVAC zone).
    fn controllers(&self) -> usize {
        1
    }

    fn feature_width(&self) -> usize;

    /// Starts an episode; the seed fixes every random draw inside it.
    fn reset(&mut self, seed: u64) -> Result<()>;

    /// Current decision epoch, or `None` once the episode is over.
    fn observe(&self) -> Option<Observation>;

    /// Applies one action per controller and advances to the next epoch.
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;

    fn summary(&self) -> EpisodeSummary;

    /// Reference policy's actions for the current epoch.
    fn baseline_actions(&self) -> Result<Vec<usize>>;
}

/// Runs one episode of the environment's reference policy.
pub fn run_baseline(env: &mut dyn Environment, seed: u64) -> Result<EpisodeSummary> {
    env.reset(seed)?;
    while env.observe().is_some() {
        let actions = env.baseline_actions()?;
        env.step(&actions)?;
    }
    Ok(env.summary())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DoubleQMode {
    /// One network, bootstrapping from itself.
    Off,
    /// Two networks swapping roles after every update.
    Alternate,
    /// Second network is a copy of the first refreshed every `period` updates.
    HardCopy { period: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub discount: Discounting,
    /// Reward scale in the clipped target.
    pub rho: f64,
    pub clip: bool,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Exploration rate during online episodes.
    pub epsilon_online: f64,
    pub memory_capacity: usize,
    /// Hidden layer widths; input and output widths come from the environment.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Mini-batches drawn at the end of every execution sequence.
    pub refresh_batches: usize,
    /// Mini-batches per offline episode.
    pub offline_batches: usize,
    pub double_q: DoubleQMode,
    /// Abort when a Q estimate exceeds this many clip ranges.
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
}

fn default_divergence() -> f64 {
    10.0
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            discount: Discounting::Discrete { gamma: 0.9 },
            rho: 10.0,
            clip: true,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_online: 0.05,
            memory_capacity: 20_000,
            hidden: vec![16],
            train: TrainConfig {
                learning_rate: 0.05,
                batch_size: 32,
                epochs: 1,
                ..TrainConfig::default()
            },
            refresh_batches: 50,
            offline_batches: 200,
            double_q: DoubleQMode::Alternate,
            divergence_factor: 10.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.discount.validate()?;
        self.train.validate()?;
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_online", self.epsilon_online),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {e}")));
            }
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config("memory_capacity must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let DoubleQMode::HardCopy { period: 0 } = self.double_q {
            return Err(Error::Config("hard-copy period must be at least 1".into()));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(Error::Config("divergence_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Episode metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub mean_abs_dq: f64,
    pub energy_or_cost: f64,
    pub violations: f64,
    pub epsilon: f64,
}

pub const EPISODE_CSV_HEADER: &str =
    "episode,steps,return,mean_abs_dq,energy_or_cost,violations,epsilon";

/// Q estimator pair plus replay memory for one controller.
#[derive(Debug, Clone)]
struct Controller {
    nets: [WeightSet; 2],
    /// Network updated next; the other provides bootstrap values.
    turn: usize,
    updates: usize,
    memory: ReplayMemory,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    cfg: AgentConfig,
    controllers: Vec<Controller>,
    rng: ChaCha8Rng,
}

fn q_of(net: &WeightSet, features: &[f64]) -> Result<f64> {
    net.forward(features)
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, feature_width: usize, controllers: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if controllers == 0 || feature_width == 0 {
            return Err(Error::Config("agent needs at least one controller and one feature".into()));
        }
        let mut widths = vec![feature_width];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let spec = NetworkSpec::new(&widths).with_bias(true);
        let controllers = (0..controllers)
            .map(|c| {
                let mut init = rng_from(child_seed(labelled_seed(seed, "init"), c as u64));
                let a = WeightSet::random(&spec, &mut init)?;
                let b = match cfg.double_q {
                    DoubleQMode::Alternate => WeightSet::random(&spec, &mut init)?,
                    _ => a.clone(),
                };
                Ok(Controller {
                    nets: [a, b],
                    turn: 0,
                    updates: 0,
                    memory: ReplayMemory::new(cfg.memory_capacity)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DqnAgent {
            cfg,
            controllers,
            rng: rng_from(labelled_seed(seed, "agent")),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Network used for acting by controller `c`.
    pub fn network(&self, c: usize) -> &WeightSet {
        &self.controllers[c].nets[0]
    }

    pub fn networks(&self, c: usize) -> [&WeightSet; 2] {
        let n = &self.controllers[c].nets;
        [&n[0], &n[1]]
    }

    pub fn set_networks(&mut self, c: usize, nets: [WeightSet; 2]) {
        self.controllers[c].nets = nets;
    }

    pub fn memory(&self, c: usize) -> &ReplayMemory {
        &self.controllers[c].memory
    }

    fn divergence_limit(&self) -> f64 {
        // the clipped range [-1, 0] has width 1
        self.cfg.divergence_factor
    }

    /// Acting value: the mean of both estimators.
    fn q_values(&self, c: usize, actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let ctl = &self.controllers[c];
        actions
            .iter()
            .map(|f| {
                let a = q_of(&ctl.nets[0], f)?;
                let v = if self.cfg.double_q == DoubleQMode::Alternate {
                    0.5 * (a + q_of(&ctl.nets[1], f)?)
                } else {
                    a
                };
                if !v.is_finite() || v.abs() > self.divergence_limit() {
                    return Err(Error::Divergence(format!(
                        "controller {c}: Q estimate {v} exceeds {} (features {f:?})",
                        self.divergence_limit()
                    )));
                }
                Ok(v)
            })
            .collect()
    }

    /// Greedy actions for the current epoch.
    pub fn greedy(&self, obs: &Observation) -> Result<Vec<usize>> {
        obs.controllers
            .iter()
            .enumerate()
            .map(|(c, acts)| {
                let q = self.q_values(c, acts)?;
                argmax(&q).ok_or_else(|| Error::Env(format!("controller {c} has no actions")))
            })
            .collect()
    }

    fn act(&mut self, obs: &Observation, epsilon: f64) -> Result<Vec<usize>> {
        let mut actions = Vec::with_capacity(obs.controllers.len());
        for (c, acts) in obs.controllers.iter().enumerate() {
            let q = self.q_values(c, acts)?;
            actions.push(select_action(&q, epsilon, &mut self.rng)?);
        }
        Ok(actions)
    }

    /// Bootstrap value of the next epoch for the network at `upd`.
    /// Alternate mode picks the action with `upd` and values it with the
    /// other network; otherwise it is a plain max over the target network.
    fn next_value(&self, c: usize, upd: usize, next: &[Vec<f64>]) -> Result<f64> {
        if next.is_empty() {
            return Ok(0.0);
        }
        let ctl = &self.controllers[c];
        let other = &ctl.nets[1 - upd];
        match self.cfg.double_q {
            DoubleQMode::Alternate => {
                let own: Vec<f64> = next.iter().map(|f| q_of(&ctl.nets[upd], f)).collect::<Result<_>>()?;
                q_of(other, &next[argmax(&own).expect("non-empty")])
            }
            DoubleQMode::HardCopy { .. } => next
                .iter()
                .map(|f| q_of(other, f))
                .try_fold(f64::NEG_INFINITY, |m, q| q.map(|q| m.max(q))),
            DoubleQMode::Off => next
                .iter()
                .map(|f| q_of(&ctl.nets[0], f))
                .try_fold(f64::NEG_INFINITY, |m, q| q.map(|q| m.max(q))),
        }
    }

    fn target(&self, c: usize, upd: usize, exp: &Experience) -> Result<f64> {
        let next = self.next_value(c, upd, &exp.next_features)?;
        let t = bellman_target(
            exp.reward,
            next,
            self.cfg.discount.factor(exp.t_next - exp.t),
            self.cfg.rho,
            self.cfg.clip,
        );
        if !t.is_finite() {
            return Err(Error::Training(format!(
                "non-finite target from reward {} and next value {next}",
                exp.reward
            )));
        }
        Ok(t)
    }

    /// Index of the network trained by the next update.
    fn updated_index(&self, c: usize) -> usize {
        match self.cfg.double_q {
            DoubleQMode::Alternate => self.controllers[c].turn,
            _ => 0,
        }
    }

    fn finish_update(&mut self, c: usize) {
        let mode = self.cfg.double_q;
        let ctl = &mut self.controllers[c];
        ctl.updates += 1;
        match mode {
            DoubleQMode::Alternate => ctl.turn = 1 - ctl.turn,
            DoubleQMode::HardCopy { period } if ctl.updates % period == 0 => {
                ctl.nets[1] = ctl.nets[0].clone();
            }
            _ => {}
        }
    }

    /// Per-epoch Q update: refreshes the experience's Q estimate from the
    /// Bellman target and returns `|target - Q(s, a)|`.
    fn q_update(&mut self, c: usize, exp: &mut Experience) -> Result<f64> {
        let upd = self.updated_index(c);
        let target = self.target(c, upd, exp)?;
        let current = q_of(&self.controllers[c].nets[upd], &exp.features)?;
        exp.q_estimate = target;
        Ok((target - current).abs())
    }

    /// Mini-batch refresh of the networks from replay memory; targets are
    /// recomputed with the current networks unless `stored` is set, in
    /// which case the stored Q estimates are the labels.
    fn refresh(&mut self, c: usize, batches: usize, stored: bool) -> Result<()> {
        let bs = self.cfg.train.batch_size;
        for _ in 0..batches {
            let idx = self.controllers[c].memory.sample_indices(bs, &mut self.rng);
            if idx.is_empty() {
                return Ok(());
            }
            let upd = self.updated_index(c);
            let batch = idx
                .iter()
                .map(|&i| {
                    let exp = self.controllers[c].memory.get(i).expect("sampled index");
                    let label = if stored { exp.q_estimate } else { self.target(c, upd, exp)? };
                    Ok((exp.features.clone(), label))
                })
                .collect::<Result<Vec<_>>>()?;
            let ctl = &mut self.controllers[c];
            ctl.nets[upd] = ctl.nets[upd].train_minibatch(&batch, &self.cfg.train)?;
            if stored && self.cfg.double_q == DoubleQMode::Alternate {
                // both estimators learn the same offline labels
                ctl.nets[1 - upd] = ctl.nets[1 - upd].train_minibatch(&batch, &self.cfg.train)?;
            } else {
                self.finish_update(c);
            }
        }
        Ok(())
    }

    /// Runs one episode under `policy`, returning per-controller trajectories
    /// and the summary.
    fn rollout(
        &mut self,
        env: &mut dyn Environment,
        seed: u64,
        epsilon: f64,
        learn: bool,
    ) -> Result<(Vec<Vec<Experience>>, EpisodeMetrics)> {
        env.reset(seed)?;
        let n_ctl = env.controllers();
        if n_ctl != self.controllers.len() {
            return Err(Error::Env(format!(
                "environment has {n_ctl} controllers, agent has {}",
                self.controllers.len()
            )));
        }
        let mut trajectories: Vec<Vec<Experience>> = vec![Vec::new(); n_ctl];
        let mut pending: Option<(Observation, Vec<usize>, Vec<f64>)> = None;
        let mut episode_return = 0.0;
        let mut dq_sum = 0.0;
        let mut dq_n = 0usize;
        let mut steps = 0usize;
        loop {
            let obs = env.observe();
            if let Some((prev, actions, rewards)) = pending.take() {
                for c in 0..n_ctl {
                    let mut exp = Experience {
                        features: prev.controllers[c][actions[c]].clone(),
                        action: actions[c],
                        reward: rewards[c],
                        t: prev.time,
                        t_next: obs.as_ref().map_or(prev.time, |o| o.time.max(prev.time)),
                        next_features: obs.as_ref().map(|o| o.controllers[c].clone()).unwrap_or_default(),
                        q_estimate: 0.0,
                    };
                    if learn {
                        dq_sum += self.q_update(c, &mut exp)?;
                        dq_n += 1;
                    }
                    trajectories[c].push(exp);
                }
            }
            let Some(obs) = obs else { break };
            let actions = self.act(&obs, epsilon)?;
            let outcome = env
                .step(&actions)
                .map_err(|e| Error::Env(format!("step {steps} at t={}: {e}", obs.time)))?;
            let rewards: Vec<f64> = outcome
                .rewards
                .iter()
                .map(|segs| self.cfg.discount.accumulate(segs))
                .collect();
            episode_return += rewards.iter().sum::<f64>();
            steps += 1;
            pending = Some((obs, actions, rewards));
        }
        let summary = env.summary();
        Ok((
            trajectories,
            EpisodeMetrics {
                episode: 0,
                steps,
                episode_return,
                mean_abs_dq: if dq_n == 0 { 0.0 } else { dq_sum / dq_n as f64 },
                energy_or_cost: summary.energy_or_cost,
                violations: summary.violations,
                epsilon,
            },
        ))
    }

    /// Offline phase: simulate `episodes` episodes with ε annealed from
    /// `epsilon_start` to `epsilon_min`, label every transition with its
    /// (clipped) discounted return, and train on the memory after each
    /// episode so later episodes follow a gradually refined policy.
    pub fn offline_construct(
        &mut self,
        env: &mut dyn Environment,
        episodes: usize,
        root_seed: u64,
    ) -> Result<Vec<EpisodeMetrics>> {
        if episodes == 0 {
            return Err(Error::Config("offline construction needs at least one episode".into()));
        }
        let mut rows = Vec::with_capacity(episodes);
        for ep in 0..episodes {
            let eps = annealed_epsilon(self.cfg.epsilon_start, self.cfg.epsilon_min, ep, episodes);
            let seed = child_seed(labelled_seed(root_seed, "offline"), ep as u64);
            let (traj, mut m) = self.rollout(env, seed, eps, false)?;
            for (c, mut t) in traj.into_iter().enumerate() {
                self.label_returns(&mut t);
                for exp in t {
                    self.controllers[c].memory.push(exp)?;
                }
                self.refresh(c, self.cfg.offline_batches, true)?;
            }
            m.episode = ep;
            rows.push(m);
        }
        Ok(rows)
    }

    /// Discounted return from each epoch to the end of the trajectory,
    /// clipped at every step when clipping is on.
    fn label_returns(&self, traj: &mut [Experience]) {
        let mut g = 0.0;
        for exp in traj.iter_mut().rev() {
            let disc = if exp.is_terminal() { 0.0 } else { self.cfg.discount.factor(exp.t_next - exp.t) };
            g = bellman_target(exp.reward, g, disc, self.cfg.rho, self.cfg.clip);
            exp.q_estimate = g;
        }
    }

    /// Online execution sequence: ε-greedy control with a Q update at every
    /// epoch, then a mini-batch refresh of the networks from memory.
    pub fn online_episode(
        &mut self,
        env: &mut dyn Environment,
        seed: u64,
        episode: usize,
    ) -> Result<EpisodeMetrics> {
        let eps = self.cfg.epsilon_online;
        let (traj, mut m) = self.rollout(env, seed, eps, true)?;
        for (c, t) in traj.into_iter().enumerate() {
            for exp in t {
                self.controllers[c].memory.push(exp)?;
            }
            self.refresh(c, self.cfg.refresh_batches, false)?;
        }
        m.episode = episode;
        Ok(m)
    }

    /// Greedy episode without learning.
    pub fn evaluate(&mut self, env: &mut dyn Environment, seed: u64) -> Result<EpisodeMetrics> {
        Ok(self.rollout(env, seed, 0.0, false)?.1)
    }
}

/// CSV body for episode metrics (header included).
pub fn render_episode_csv(rows: &[EpisodeMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}
