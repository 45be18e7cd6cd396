//! Residential task scheduling over one day of slots. Tasks arrive one per
//! epoch in id order; the action is the start slot of the pending task.

use serde::{Deserialize, Serialize};

use super::traces::{task_set, weather_profile, SlotProfile, TaskSpec, WeatherParams};
use super::{flag, grid_power, scale};
use crate::drl::{EpisodeSummary, Environment, Observation, RewardSegment, StepOutcome};
use crate::error::{Error, Result};
use crate::seed::labelled_seed;

/// Width of the state-action encoding.
pub const GRID_FEATURES: usize = 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub slots: usize,
    pub slot_hours: f64,
    pub tasks: usize,
    /// Consumption price coefficient in $ per kW² per hour.
    pub kappa: f64,
    /// Non-schedulable load per slot in kW.
    pub base_load_kw: Vec<f64>,
    pub weather: WeatherParams,
}

pub fn default_base_load() -> Vec<f64> {
    (0..24)
        .map(|h| match h {
            0..=5 => 0.4,
            17..=21 => 1.0,
            _ => 0.6,
        })
        .collect()
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            slots: 24,
            slot_hours: 1.0,
            tasks: 100,
            kappa: 0.02,
            base_load_kw: default_base_load(),
            weather: WeatherParams::default(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 4 || self.weather.slots_per_day * self.weather.days != self.slots {
            return Err(Error::Config(format!(
                "grid needs at least 4 slots matching the weather profile, got {}",
                self.slots
            )));
        }
        if self.base_load_kw.len() != self.slots || self.base_load_kw.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("base load needs one non-negative value per slot".into()));
        }
        if !(self.kappa >= 0.0 && self.slot_hours > 0.0) {
            return Err(Error::Config("kappa must be non-negative and slots positive".into()));
        }
        if self.tasks == 0 {
            return Err(Error::Config("grid episode needs at least one task".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    cfg: GridConfig,
    tasks: Vec<TaskSpec>,
    profile: Vec<SlotProfile>,
    /// Scheduled flexible load per slot.
    flex_kw: Vec<f64>,
    starts: Vec<usize>,
    next: usize,
    inconvenience: f64,
    fixed_tasks: Option<Vec<TaskSpec>>,
    max_tou: f64,
    remaining_kwh: f64,
}

impl GridEnv {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        cfg.validate()?;
        let max_tou = cfg.weather.tou_hourly.iter().cloned().fold(0.0, f64::max).max(1e-9);
        Ok(GridEnv {
            flex_kw: vec![0.0; cfg.slots],
            cfg,
            tasks: Vec::new(),
            profile: Vec::new(),
            starts: Vec::new(),
            next: 0,
            inconvenience: 0.0,
            fixed_tasks: None,
            max_tou,
            remaining_kwh: 0.0,
        })
    }

    /// Uses `tasks` on every reset instead of generating a set.
    pub fn with_tasks(mut self, tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("fixed task set is empty".into()));
        }
        for t in &tasks {
            if t.dur == 0 || t.dur > self.cfg.slots || t.win_end >= self.cfg.slots || t.win_start > t.win_end {
                return Err(Error::Config(format!("task {} does not fit the day", t.task_id)));
            }
            if !(t.kw >= 0.0 && t.inconv >= 0.0) {
                return Err(Error::Config(format!("task {} has negative power or price", t.task_id)));
            }
        }
        self.fixed_tasks = Some(tasks);
        Ok(self)
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn profile(&self) -> &[SlotProfile] {
        &self.profile
    }

    /// Start slots chosen so far, in task order.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn load_kw(&self, slot: usize) -> f64 {
        self.cfg.base_load_kw[slot] + self.flex_kw[slot]
    }

    /// `TOU(t) P + kappa P²` over one slot.
    pub fn slot_cost(&self, slot: usize, p_grid: f64) -> f64 {
        (self.profile[slot].tou_price * p_grid + self.cfg.kappa * p_grid * p_grid) * self.cfg.slot_hours
    }

    fn grid_kw(&self, slot: usize, extra: f64) -> f64 {
        grid_power(self.load_kw(slot) + extra, self.profile[slot].pv_kw).expect("non-negative load and PV")
    }

    /// Slots between the task's placement and its desired window.
    pub fn displacement(task: &TaskSpec, start: usize) -> usize {
        let end = start + task.dur - 1;
        task.win_start.saturating_sub(start) + end.saturating_sub(task.win_end)
    }

    /// Increase in energy cost from placing `task` at `start`.
    pub fn marginal_cost(&self, task: &TaskSpec, start: usize) -> f64 {
        (start..start + task.dur)
            .map(|t| self.slot_cost(t, self.grid_kw(t, task.kw)) - self.slot_cost(t, self.grid_kw(t, 0.0)))
            .sum()
    }

    pub fn energy_cost(&self) -> f64 {
        (0..self.cfg.slots).map(|t| self.slot_cost(t, self.grid_kw(t, 0.0))).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.energy_cost() + self.inconvenience
    }

    fn feasible_starts(&self, task: &TaskSpec) -> std::ops::RangeInclusive<usize> {
        0..=self.cfg.slots - task.dur
    }

    /// State-action encoding for starting `task` at `start`.
    pub fn features(&self, task: &TaskSpec, start: usize) -> Vec<f64> {
        let n = self.cfg.slots as f64;
        let span = start..start + task.dur;
        let d = task.dur as f64;
        let mean = |f: &dyn Fn(usize) -> f64| span.clone().map(f).sum::<f64>() / d;
        let pv_peak = self.cfg.weather.pv_peak_kw.max(1e-9);
        let p_cap = 15.0;
        let mut f = Vec::with_capacity(GRID_FEATURES);
        let bin = start * 6 / self.cfg.slots;
        f.extend((0..6).map(|b| flag(b == bin)));
        f.push(scale(mean(&|t| self.profile[t].tou_price), 0.0, self.max_tou));
        f.push(scale(mean(&|t| self.profile[t].pv_kw), 0.0, pv_peak));
        f.push(scale(mean(&|t| self.grid_kw(t, 0.0)), 0.0, p_cap));
        f.push(scale(mean(&|t| (self.profile[t].pv_kw - self.load_kw(t)).max(0.0)), 0.0, pv_peak));
        // 1.5 kW for 3 slots on top of a p_cap load
        let worst = 3.0 * (self.max_tou * 1.5 + self.cfg.kappa * (3.0 * p_cap + 2.25)) * self.cfg.slot_hours;
        f.push(scale(self.marginal_cost(task, start), 0.0, worst.max(1e-9)));
        let disp = Self::displacement(task, start) as f64;
        f.push(scale(disp, 0.0, n / 2.0));
        f.push(scale(disp * task.inconv, 0.0, 2.0));
        f.push(scale(task.kw, 0.0, 1.5));
        f.push(scale(d, 1.0, 3.0));
        f.push(scale((task.win_end + 1 - task.win_start) as f64, 0.0, n));
        f.push(scale(start as f64 - task.win_start as f64, -n / 2.0, n / 2.0));
        f.push(flag(disp == 0.0));
        f.push(scale((self.tasks.len() - self.next) as f64, 0.0, self.tasks.len() as f64));
        f.push(scale(span.clone().map(|t| self.grid_kw(t, task.kw)).fold(0.0, f64::max), 0.0, p_cap));
        f.push(flag(span.clone().any(|t| self.profile[t].tou_price >= self.max_tou)));
        let mid = (start as f64 + d / 2.0) / n * std::f64::consts::TAU;
        f.push(mid.sin());
        f.push(mid.cos());
        f.push(scale(mean(&|t| self.cfg.base_load_kw[t]), 0.0, 2.0));
        f.push(scale(mean(&|t| self.flex_kw[t]), 0.0, p_cap));
        f.push(scale(self.remaining_kwh, 0.0, 4.5 * self.tasks.len() as f64));
        debug_assert_eq!(f.len(), GRID_FEATURES);
        f
    }

    /// Earliest start inside the window, or the latest start of the day.
    pub fn earliest_feasible(&self, task: &TaskSpec) -> usize {
        task.win_start.min(self.cfg.slots - task.dur)
    }
}

impl Environment for GridEnv {
    fn feature_width(&self) -> usize {
        GRID_FEATURES
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        self.tasks = match &self.fixed_tasks {
            Some(t) => t.clone(),
            None => task_set(labelled_seed(seed, "tasks"), self.cfg.tasks, self.cfg.slots)?,
        };
        self.profile = weather_profile(labelled_seed(seed, "weather"), &self.cfg.weather)?;
        self.flex_kw = vec![0.0; self.cfg.slots];
        self.starts.clear();
        self.next = 0;
        self.inconvenience = 0.0;
        self.remaining_kwh = self.tasks.iter().map(|t| t.kw * t.dur as f64).sum();
        Ok(())
    }

    fn observe(&self) -> Option<Observation> {
        let task = self.tasks.get(self.next)?;
        Some(Observation {
            time: self.next as f64,
            controllers: vec![self.feasible_starts(task).map(|a| self.features(task, a)).collect()],
        })
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let task = *self.tasks.get(self.next).ok_or_else(|| Error::env("no pending task"))?;
        let start = *actions.first().ok_or_else(|| Error::env("missing action"))?;
        if start + task.dur > self.cfg.slots {
            return Err(Error::env(format!(
                "task {} of {} slots cannot start at slot {start}",
                task.task_id, task.dur
            )));
        }
        let energy = self.marginal_cost(&task, start);
        let penalty = task.inconv * Self::displacement(&task, start) as f64;
        for t in start..start + task.dur {
            self.flex_kw[t] += task.kw;
        }
        self.inconvenience += penalty;
        self.remaining_kwh -= task.kw * task.dur as f64;
        self.starts.push(start);
        self.next += 1;
        Ok(StepOutcome {
            rewards: vec![vec![RewardSegment::impulse(-(energy + penalty))]],
        })
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            steps: self.next,
            energy_or_cost: self.total_cost(),
            violations: 0.0,
        }
    }

    fn baseline_actions(&self) -> Result<Vec<usize>> {
        let task = self.tasks.get(self.next).ok_or_else(|| Error::env("no pending task"))?;
        Ok(vec![self.earliest_feasible(task)])
    }
}
