//! Tabular estimators and a small MDP with a value-iteration oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::agent::{EpisodeSummary, Environment, Observation, StepOutcome};
use super::{argmax, RewardSegment};
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Finite MDP with stochastic transitions and rewards drawn uniformly from
/// `mean ± noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    /// `transitions[s][a]` lists `(next state, probability)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// Expected reward `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub reward_noise: f64,
}

impl ToyMdp {
    /// Fixed 3-state, 2-action MDP with rewards in `[-1, 0]`.
    pub fn three_state() -> Self {
        ToyMdp {
            transitions: vec![
                vec![vec![(0, 0.8), (1, 0.2)], vec![(1, 0.9), (2, 0.1)]],
                vec![vec![(2, 0.7), (0, 0.3)], vec![(1, 1.0)]],
                vec![vec![(0, 1.0)], vec![(2, 0.5), (1, 0.5)]],
            ],
            rewards: vec![vec![-0.6, -0.3], vec![-0.4, -0.5], vec![-0.1, -0.8]],
            reward_noise: 0.1,
        }
    }

    pub fn states(&self) -> usize {
        self.rewards.len()
    }

    pub fn actions(&self) -> usize {
        self.rewards[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        if n == 0 || self.transitions.len() != n {
            return Err(Error::Config("MDP needs matching transition and reward tables".into()));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != self.actions() || self.rewards[s].len() != self.actions() {
                return Err(Error::Config(format!("state {s} has a ragged action table")));
            }
            for (a, dist) in row.iter().enumerate() {
                let total: f64 = dist.iter().map(|d| d.1).sum();
                if (total - 1.0).abs() > 1e-9 || dist.iter().any(|&(t, p)| t >= n || p < 0.0) {
                    return Err(Error::Config(format!(
                        "transition ({s}, {a}) is not a distribution over states"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Samples `(next state, reward)`.
    pub fn sample<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.gen();
        let dist = &self.transitions[s][a];
        let mut acc = 0.0;
        let mut next = dist.last().expect("non-empty distribution").0;
        for &(t, p) in dist {
            acc += p;
            if u < acc {
                next = t;
                break;
            }
        }
        let noise = if self.reward_noise > 0.0 {
            rng.gen_range(-self.reward_noise..=self.reward_noise)
        } else {
            0.0
        };
        (next, self.rewards[s][a] + noise)
    }
}

/// Optimal action values by value iteration, iterated until the largest
/// change falls below `tol`.
pub fn value_iteration(mdp: &ToyMdp, gamma: f64, tol: f64) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.states(), mdp.actions());
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().cloned().fold(f64::MIN, f64::max)).collect();
        let mut delta = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = mdp.transitions[s][a].iter().map(|&(t, p)| p * v[t]).sum();
                let new = mdp.rewards[s][a] + gamma * next;
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < tol {
            return q;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
    visits: Vec<Vec<u64>>,
}

impl QTable {
    pub fn new(states: usize, actions: usize) -> Self {
        QTable {
            values: vec![vec![0.0; actions]; states],
            visits: vec![vec![0; actions]; states],
        }
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(&self.values[s]).expect("actions exist")
    }

    pub fn max(&self, s: usize) -> f64 {
        self.values[s][self.greedy(s)]
    }

    /// Single-estimator update towards `r + gamma max_a' Q(s', a')`.
    /// `alpha = None` uses `1 / visits`.
    pub fn update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, gamma: f64, alpha: Option<f64>) -> Result<()> {
        let boot = next.map_or(0.0, |n| self.max(n));
        let target = r + gamma * boot;
        apply(&mut self.values[s][a], &mut self.visits[s][a], target, alpha)
    }
}

fn apply(q: &mut f64, visits: &mut u64, target: f64, alpha: Option<f64>) -> Result<()> {
    *visits += 1;
    let alpha = alpha.unwrap_or(1.0 / *visits as f64);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("learning rate must lie in (0, 1], got {alpha}")));
    }
    let new = *q + alpha * (target - *q);
    if !new.is_finite() {
        return Err(Error::Training(format!("Q update produced {new} from target {target}")));
    }
    *q = new;
    Ok(())
}

/// Two tables updated in turn: the updated table picks the next action and
/// the other one values it.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleQTable {
    pub tables: [QTable; 2],
    turn: usize,
}

impl DoubleQTable {
    pub fn new(states: usize, actions: usize) -> Self {
        DoubleQTable {
            tables: [QTable::new(states, actions), QTable::new(states, actions)],
            turn: 0,
        }
    }

    pub fn update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, gamma: f64, alpha: Option<f64>) -> Result<()> {
        let (upd, other) = (self.turn, 1 - self.turn);
        let boot = match next {
            Some(n) => {
                let pick = self.tables[upd].greedy(n);
                self.tables[other].values[n][pick]
            }
            None => 0.0,
        };
        let t = &mut self.tables[upd];
        apply(&mut t.values[s][a], &mut t.visits[s][a], r + gamma * boot, alpha)?;
        self.turn = other;
        Ok(())
    }

    /// Mean of the two tables.
    pub fn value(&self, s: usize, a: usize) -> f64 {
        0.5 * (self.tables[0].values[s][a] + self.tables[1].values[s][a])
    }

    pub fn greedy(&self, s: usize) -> usize {
        let row: Vec<f64> = (0..self.tables[0].values[s].len()).map(|a| self.value(s, a)).collect();
        argmax(&row).expect("actions exist")
    }
}

/// The toy MDP as an agent environment with a fixed horizon. Features of
/// `(s, a)` are ±1 flags: state 0, state 1, action 1.
#[derive(Debug, Clone)]
pub struct ToyMdpEnv {
    pub mdp: ToyMdp,
    pub horizon: usize,
    state: usize,
    step: usize,
    rng: ChaCha8Rng,
    total_reward: f64,
}

impl ToyMdpEnv {
    pub fn new(mdp: ToyMdp, horizon: usize) -> Result<Self> {
        mdp.validate()?;
        if mdp.states() != 3 || mdp.actions() != 2 {
            return Err(Error::Config("the toy feature encoding needs 3 states and 2 actions".into()));
        }
        Ok(ToyMdpEnv {
            mdp,
            horizon,
            state: 0,
            step: 0,
            rng: rng_from(0),
            total_reward: 0.0,
        })
    }

    pub fn features(s: usize, a: usize) -> Vec<f64> {
        let flag = |b: bool| if b { 1.0 } else { -1.0 };
        vec![flag(s == 0), flag(s == 1), flag(a == 1)]
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for ToyMdpEnv {
    fn feature_width(&self) -> usize {
        3
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        self.rng = rng_from(seed);
        self.state = self.rng.gen_range(0..self.mdp.states());
        self.step = 0;
        self.total_reward = 0.0;
        Ok(())
    }

    fn observe(&self) -> Option<Observation> {
        (self.step < self.horizon).then(|| Observation {
            time: self.step as f64,
            controllers: vec![(0..self.mdp.actions()).map(|a| Self::features(self.state, a)).collect()],
        })
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let a = actions[0];
        if a >= self.mdp.actions() {
            return Err(Error::Env(format!("action {a} out of range")));
        }
        let (next, r) = self.mdp.sample(self.state, a, &mut self.rng);
        self.state = next;
        self.step += 1;
        self.total_reward += r;
        Ok(StepOutcome {
            rewards: vec![vec![RewardSegment::impulse(r)]],
        })
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            steps: self.step,
            energy_or_cost: -self.total_reward,
            violations: 0.0,
        }
    }

    fn baseline_actions(&self) -> Result<Vec<usize>> {
        Ok(vec![0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn toy_mdp_is_valid_with_distinct_optimal_actions() {
        let mdp = ToyMdp::three_state();
        mdp.validate().unwrap();
        let q = value_iteration(&mdp, 0.5, 1e-12);
        for row in &q {
            assert!((row[0] - row[1]).abs() > 0.05, "{q:?}");
        }
        let policy: Vec<usize> = q.iter().map(|r| argmax(r).unwrap()).collect();
        assert!(policy.contains(&0) && policy.contains(&1), "{policy:?}");
    }

    #[test]
    fn gamma_zero_alpha_one_sets_reward() {
        let mut t = QTable::new(1, 1);
        t.update(0, 0, -0.7, Some(0), 0.0, Some(1.0)).unwrap();
        assert_eq!(t.values[0][0], -0.7);
        assert!(t.update(0, 0, 0.0, None, 0.0, Some(0.0)).is_err());
    }

    #[test]
    fn double_q_alternates_tables() {
        let mut d = DoubleQTable::new(1, 1);
        d.update(0, 0, -1.0, None, 0.5, Some(1.0)).unwrap();
        assert_eq!(d.tables[0].values[0][0], -1.0);
        assert_eq!(d.tables[1].values[0][0], 0.0);
        d.update(0, 0, -1.0, None, 0.5, Some(1.0)).unwrap();
        assert_eq!(d.tables[1].values[0][0], -1.0);
    }

    #[test]
    fn sampling_follows_transition_table() {
        let mdp = ToyMdp::three_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let hits = (0..n).filter(|_| mdp.sample(0, 0, &mut rng).0 == 1).count();
        assert!((hits as f64 / n as f64 - 0.2).abs() < 0.015);
    }

    #[test]
    fn env_horizon_and_features() {
        let mut env = ToyMdpEnv::new(ToyMdp::three_state(), 4).unwrap();
        env.reset(3).unwrap();
        let mut steps = 0;
        while let Some(obs) = env.observe() {
            assert_eq!(obs.controllers[0].len(), 2);
            env.step(&[1]).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 4);
        assert_eq!(ToyMdpEnv::features(2, 1), vec![-1.0, -1.0, 1.0]);
    }
}
