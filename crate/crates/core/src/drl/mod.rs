//! Q-learning core: experience replay, discounting, Bellman targets,
//! ε-greedy selection, tabular double-Q and a DNN agent.

mod agent;
mod tabular;

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use agent::{
    render_episode_csv, run_baseline, AgentConfig, DoubleQMode, DqnAgent, EpisodeMetrics, EpisodeSummary, Environment,
    Observation, StepOutcome, EPISODE_CSV_HEADER,
};
pub use tabular::{value_iteration, DoubleQTable, QTable, ToyMdp, ToyMdpEnv};

use crate::error::{Error, Result};

/// One decision epoch as seen by a controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Features of the chosen state-action pair.
    pub features: Vec<f64>,
    pub action: usize,
    /// Reward of the interval, already discounted within it in continuous mode.
    pub reward: f64,
    pub t: f64,
    pub t_next: f64,
    /// Features of every action at the next epoch; empty when terminal.
    pub next_features: Vec<Vec<f64>>,
    /// Latest Q estimate for `(features, action)`.
    pub q_estimate: f64,
}

impl Experience {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_next >= self.t) {
            return Err(Error::arg(format!(
                "experience ends at {} before it starts at {}",
                self.t_next, self.t
            )));
        }
        if !self.reward.is_finite() {
            return Err(Error::arg(format!("non-finite reward {}", self.reward)));
        }
        Ok(())
    }

    pub fn is_terminal(&self) -> bool {
        self.next_features.is_empty()
    }
}

/// Bounded FIFO of experiences; the oldest entry is evicted first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    entries: VecDeque<Experience>,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayMemory {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total insertions, evicted entries included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends `exp`, returning the evicted entry when full.
    pub fn push(&mut self, exp: Experience) -> Result<Option<Experience>> {
        exp.validate()?;
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(exp);
        self.inserted += 1;
        Ok(evicted)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.entries.get(i)
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut Experience> {
        self.entries.get_mut(i)
    }

    /// Indices of a uniform sample with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.entries.len())).collect()
    }
}

/// Piece of reward earned at a constant rate over `[start, start + duration)`,
/// measured from the start of the decision interval. Zero duration is an
/// impulse at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSegment {
    pub start: f64,
    pub duration: f64,
    pub amount: f64,
}

impl RewardSegment {
    pub fn impulse(amount: f64) -> Self {
        RewardSegment {
            start: 0.0,
            duration: 0.0,
            amount,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Discounting {
    Discrete { gamma: f64 },
    /// Event-driven time with rate `beta` per second.
    Continuous { beta: f64 },
}

impl Discounting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Discounting::Discrete { gamma } if !(0.0..1.0).contains(&gamma) => {
                Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")))
            }
            Discounting::Continuous { beta } if !(beta.is_finite() && beta > 0.0) => {
                Err(Error::Config(format!("beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Discount applied to the value of the next epoch.
    pub fn factor(&self, dt: f64) -> f64 {
        match *self {
            Discounting::Discrete { gamma } => gamma,
            Discounting::Continuous { beta } => (-beta * dt.max(0.0)).exp(),
        }
    }

    /// Interval reward: the plain sum in discrete mode, the
    /// `e^{-beta tau}`-weighted integral of piecewise-constant rates in
    /// continuous mode.
    pub fn accumulate(&self, segments: &[RewardSegment]) -> f64 {
        match *self {
            Discounting::Discrete { .. } => segments.iter().map(|s| s.amount).sum(),
            Discounting::Continuous { beta } => segments
                .iter()
                .map(|s| {
                    let head = (-beta * s.start).exp();
                    if s.duration <= 0.0 {
                        s.amount * head
                    } else {
                        let rate = s.amount / s.duration;
                        // rate * ∫ e^{-beta tau} over the segment
                        rate * head * -(-beta * s.duration).exp_m1() / beta
                    }
                })
                .sum(),
        }
    }
}

/// Bellman target. With clipping the reward is divided by `rho` and the
/// result is floored at -1, so targets lie in `[-1, 0]` for non-positive
/// rewards and next values; without clipping it is `r + discount * next`.
pub fn bellman_target(reward: f64, next_max_q: f64, discount: f64, rho: f64, clip: bool) -> f64 {
    if clip {
        (reward / rho + discount * next_max_q).max(-1.0)
    } else {
        reward + discount * next_max_q
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// ε-greedy choice over `q_values`. One uniform draw decides exploration;
/// a second picks the random action.
pub fn select_action<R: Rng>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::arg("no actions to choose from"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::arg(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..q_values.len()))
    } else {
        Ok(argmax(q_values).expect("non-empty"))
    }
}

/// Linear ε schedule from `start` at episode 0 to `end` at `episodes - 1`.
pub fn annealed_epsilon(start: f64, end: f64, episode: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        return end;
    }
    let frac = (episode as f64 / (episodes - 1) as f64).min(1.0);
    start + (end - start) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(reward: f64) -> Experience {
        Experience {
            features: vec![reward],
            action: 0,
            reward,
            t: 0.0,
            t_next: 1.0,
            next_features: vec![],
            q_estimate: 0.0,
        }
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.1, 0.9, 0.3], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[0.5, 0.5, 0.5], 0.0, &mut rng).unwrap(), 0);
        assert!(select_action(&[], 0.0, &mut rng).is_err());
        assert!(select_action(&[1.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn bellman_examples() {
        assert_eq!(bellman_target(-25.0, 0.0, 0.9, 10.0, true), -1.0);
        assert_eq!(bellman_target(0.0, 0.0, 0.9, 10.0, true), 0.0);
        assert!((bellman_target(-0.5, -0.3, 0.9, 10.0, true) + 0.32).abs() < 1e-12);
        assert_eq!(bellman_target(-3.0, -1.0, 0.5, 10.0, false), -3.5);
    }

    #[test]
    fn continuous_discounting() {
        let d = Discounting::Continuous { beta: 0.1 };
        assert_eq!(d.factor(0.0), 1.0);
        assert!((d.factor(10.0) - (-1.0f64).exp()).abs() < 1e-15);
        // constant rate 1 over [0, 10): (1 - e^-1) / 0.1
        let r = d.accumulate(&[RewardSegment {
            start: 0.0,
            duration: 10.0,
            amount: 10.0,
        }]);
        assert!((r - (1.0 - (-1.0f64).exp()) / 0.1).abs() < 1e-12);
        // splitting a segment leaves the integral unchanged
        let split = d.accumulate(&[
            RewardSegment { start: 0.0, duration: 4.0, amount: 4.0 },
            RewardSegment { start: 4.0, duration: 6.0, amount: 6.0 },
        ]);
        assert!((split - r).abs() < 1e-12);
        let disc = Discounting::Discrete { gamma: 0.9 };
        assert_eq!(disc.accumulate(&[RewardSegment::impulse(-2.0), RewardSegment::impulse(0.5)]), -1.5);
    }

    #[test]
    fn discount_validation() {
        assert!(Discounting::Discrete { gamma: 1.0 }.validate().is_err());
        assert!(Discounting::Continuous { beta: 0.0 }.validate().is_err());
        assert!(Discounting::Discrete { gamma: 0.0 }.validate().is_ok());
    }

    #[test]
    fn memory_is_fifo() {
        let mut m = ReplayMemory::new(3).unwrap();
        for i in 0..5 {
            let ev = m.push(exp(i as f64)).unwrap();
            if i >= 3 {
                assert_eq!(ev.unwrap().reward, (i - 3) as f64);
            }
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.inserted(), 5);
        let rewards: Vec<f64> = m.iter().map(|e| e.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(ReplayMemory::new(0).is_err());
    }

    #[test]
    fn bad_experience_rejected() {
        let mut m = ReplayMemory::new(2).unwrap();
        let mut e = exp(0.0);
        e.t_next = -1.0;
        assert!(m.push(e).is_err());
        assert!(m.push(exp(f64::NAN)).is_err());
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(annealed_epsilon(1.0, 0.1, 0, 10), 1.0);
        assert!((annealed_epsilon(1.0, 0.1, 9, 10) - 0.1).abs() < 1e-12);
        assert_eq!(annealed_epsilon(1.0, 0.1, 0, 1), 0.1);
    }
}
