//! Multi-zone cooling with discrete VAV flow levels and one controller per
//! zone.
//!
//! Zone temperatures follow a first-order RC model stepped with explicit
//! Euler:
//!
//! ```text
//! T_i' = T_i + dt / C_i [ (T_amb - T_i) / R_i + sum_j (T_j - T_i) / R_ij
//!                        + g_i solar + q_i + c f_i (T_supply - T_i) ]
//! ```
//!
//! Electricity is billed at the TOU price for fan power, cubic in the mean
//! flow fraction, plus cooling power, the heat removed divided by the COP.

use serde::{Deserialize, Serialize};

use super::traces::{weather_profile, SlotProfile, WeatherParams};
use super::{flag, scale};
use crate::drl::{EpisodeSummary, Environment, Observation, RewardSegment, StepOutcome};
use crate::error::{Error, Result};
use crate::seed::labelled_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneParams {
    pub capacitance_j_per_k: f64,
    /// Envelope resistance to ambient.
    pub r_k_per_w: f64,
    /// Effective solar aperture in m².
    pub solar_gain_m2: f64,
    pub internal_w: f64,
}

impl Default for ZoneParams {
    fn default() -> Self {
        ZoneParams {
            capacitance_j_per_k: 5.0e6,
            r_k_per_w: 1.0 / 150.0,
            solar_gain_m2: 2.0,
            internal_w: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvacConfig {
    pub zones: Vec<ZoneParams>,
    /// Resistance between neighbouring zones of the chain.
    pub coupling_k_per_w: f64,
    /// Flow levels as fractions of the maximum flow, strictly increasing.
    pub flow_levels: Vec<f64>,
    /// Air heat-capacity flow at maximum flow, W/K.
    pub max_flow_w_per_k: f64,
    pub supply_c: f64,
    pub band_low_c: f64,
    pub band_high_c: f64,
    pub initial_c: f64,
    /// Violation weight per °C per step.
    pub lambda: f64,
    pub step_s: f64,
    pub days: usize,
    pub fan_kw_max: f64,
    pub cop: f64,
    pub forecast_steps: usize,
    pub weather: WeatherParams,
}

impl Default for HvacConfig {
    fn default() -> Self {
        HvacConfig {
            zones: vec![ZoneParams::default()],
            coupling_k_per_w: 1.0 / 100.0,
            flow_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            max_flow_w_per_k: 600.0,
            supply_c: 13.0,
            band_low_c: 21.0,
            band_high_c: 25.0,
            initial_c: 23.0,
            lambda: 2.0,
            step_s: 900.0,
            days: 1,
            fan_kw_max: 1.5,
            cop: 3.0,
            forecast_steps: 4,
            weather: WeatherParams {
                slots_per_day: 96,
                ..WeatherParams::default()
            },
        }
    }
}

impl HvacConfig {
    pub fn steps_per_day(&self) -> usize {
        (86_400.0 / self.step_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::Config("HVAC needs at least one zone".into()));
        }
        if self.flow_levels.is_empty() || self.flow_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("flow levels must be strictly increasing".into()));
        }
        if self.flow_levels[0] < 0.0 || *self.flow_levels.last().expect("non-empty") > 1.0 {
            return Err(Error::Config("flow levels are fractions in [0, 1]".into()));
        }
        if !(self.band_low_c < self.band_high_c) {
            return Err(Error::Config("comfort band needs low < high".into()));
        }
        if !(self.step_s > 0.0 && (86_400.0 / self.step_s).fract() == 0.0) {
            return Err(Error::Config("step must divide a day".into()));
        }
        if self.weather.slots_per_day != self.steps_per_day() {
            return Err(Error::Config(format!(
                "weather needs {} slots per day for {} s steps",
                self.steps_per_day(),
                self.step_s
            )));
        }
        if self.days == 0 {
            return Err(Error::Config("HVAC episode needs at least one day".into()));
        }
        if !(self.lambda >= 0.0 && self.fan_kw_max >= 0.0 && self.cop > 0.0 && self.max_flow_w_per_k >= 0.0) {
            return Err(Error::Config("HVAC weights and plant parameters must be non-negative".into()));
        }
        for z in &self.zones {
            if !(z.capacitance_j_per_k > 0.0 && z.r_k_per_w > 0.0) {
                return Err(Error::Config("zone capacitance and resistance must be positive".into()));
            }
            // explicit Euler stays monotone while dt / tau < 1
            let conductance = 1.0 / z.r_k_per_w + self.max_flow_w_per_k + 2.0 / self.coupling_k_per_w;
            if self.step_s * conductance / z.capacitance_j_per_k >= 1.0 {
                return Err(Error::Config("time step too long for the zone time constant".into()));
            }
        }
        if !(self.coupling_k_per_w > 0.0) {
            return Err(Error::Config("zone coupling resistance must be positive".into()));
        }
        Ok(())
    }
}

/// Violation of the band in °C.
pub fn band_violation(t: f64, low: f64, high: f64) -> f64 {
    (t - high).max(0.0) + (low - t).max(0.0)
}

#[derive(Debug, Clone)]
pub struct HvacEnv {
    cfg: HvacConfig,
    weather: Vec<SlotProfile>,
    temps: Vec<f64>,
    last: Vec<usize>,
    step: usize,
    cost: f64,
    violation_steps: usize,
    violation_deg: f64,
    /// Number of weather slots beyond the episode kept for the forecast.
    lookahead: usize,
}

impl HvacEnv {
    pub fn new(cfg: HvacConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.zones.len();
        Ok(HvacEnv {
            temps: vec![cfg.initial_c; n],
            last: vec![0; n],
            lookahead: cfg.forecast_steps.div_ceil(cfg.steps_per_day()).max(1),
            cfg,
            weather: Vec::new(),
            step: 0,
            cost: 0.0,
            violation_steps: 0,
            violation_deg: 0.0,
        })
    }

    pub fn config(&self) -> &HvacConfig {
        &self.cfg
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn weather(&self) -> &[SlotProfile] {
        &self.weather
    }

    pub fn horizon(&self) -> usize {
        self.cfg.days * self.cfg.steps_per_day()
    }

    /// Energy cost so far.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Fraction of zone-steps that ended outside the band.
    pub fn violation_rate(&self) -> f64 {
        let n = self.step * self.cfg.zones.len();
        if n == 0 {
            0.0
        } else {
            self.violation_steps as f64 / n as f64
        }
    }

    /// Temperatures after one step from `temps` with the given flows.
    pub fn propagate(&self, temps: &[f64], flows: &[f64], w: &SlotProfile) -> Vec<f64> {
        let n = temps.len();
        (0..n)
            .map(|i| {
                let z = &self.cfg.zones[i];
                let mut q = (w.amb_c - temps[i]) / z.r_k_per_w + z.solar_gain_m2 * w.solar_wm2 + z.internal_w;
                for j in [i.wrapping_sub(1), i + 1] {
                    if j < n {
                        q += (temps[j] - temps[i]) / self.cfg.coupling_k_per_w;
                    }
                }
                q += self.cfg.max_flow_w_per_k * flows[i] * (self.cfg.supply_c - temps[i]);
                temps[i] + self.cfg.step_s / z.capacitance_j_per_k * q
            })
            .collect()
    }

    /// Electric power in kW for the given flows and zone temperatures.
    pub fn power_kw(&self, temps: &[f64], flows: &[f64]) -> f64 {
        let mean = flows.iter().sum::<f64>() / flows.len() as f64;
        let fan = self.cfg.fan_kw_max * mean.powi(3);
        let heat: f64 = temps
            .iter()
            .zip(flows)
            .map(|(t, f)| self.cfg.max_flow_w_per_k * f * (t - self.cfg.supply_c).max(0.0))
            .sum();
        fan + heat / self.cfg.cop / 1000.0
    }

    fn forecast(&self, field: fn(&SlotProfile) -> f64) -> f64 {
        let h = self.cfg.forecast_steps.max(1);
        (1..=h).map(|k| field(&self.weather[self.step + k])).sum::<f64>() / h as f64
    }

    /// Features of zone `i` choosing flow level `a`.
    pub fn features(&self, i: usize, a: usize) -> Vec<f64> {
        let w = &self.weather[self.step];
        let (lo, hi) = (self.cfg.band_low_c, self.cfg.band_high_c);
        let f = self.cfg.flow_levels[a];
        let mut flows: Vec<f64> = self.last.iter().map(|&l| self.cfg.flow_levels[l]).collect();
        flows[i] = f;
        let predicted = self.propagate(&self.temps, &flows, w)[i];
        let phase = (self.step % self.cfg.steps_per_day()) as f64 / self.cfg.steps_per_day() as f64 * std::f64::consts::TAU;
        let peak_price = self.cfg.weather.tou_hourly.iter().cloned().fold(1e-9, f64::max);
        let amb = (self.cfg.weather.amb_mean_c - 2.0 * self.cfg.weather.amb_swing_c - 3.0, self.cfg.weather.amb_mean_c + 2.0 * self.cfg.weather.amb_swing_c + 3.0);
        let solar_peak = self.cfg.weather.peak_solar_wm2.max(1e-9);
        let neighbours: Vec<f64> = [i.wrapping_sub(1), i + 1]
            .into_iter()
            .filter(|&j| j < self.temps.len())
            .map(|j| self.temps[j])
            .collect();
        let neighbour = if neighbours.is_empty() {
            self.temps[i]
        } else {
            neighbours.iter().sum::<f64>() / neighbours.len() as f64
        };
        let zone_power = self.cfg.fan_kw_max * f.powi(3)
            + self.cfg.max_flow_w_per_k * f * (self.temps[i] - self.cfg.supply_c).max(0.0) / self.cfg.cop / 1000.0;
        let max_power = self.cfg.fan_kw_max + self.cfg.max_flow_w_per_k * 20.0 / self.cfg.cop / 1000.0;
        let mut x = vec![
            phase.sin(),
            phase.cos(),
            scale(self.temps[i], lo - 3.0, hi + 3.0),
            scale(predicted, lo - 3.0, hi + 3.0),
            scale(neighbour, lo - 3.0, hi + 3.0),
            scale(w.amb_c, amb.0, amb.1),
            scale(w.solar_wm2, 0.0, solar_peak),
            scale(w.tou_price, 0.0, peak_price),
            scale(self.forecast(|s| s.amb_c), amb.0, amb.1),
            scale(self.forecast(|s| s.solar_wm2), 0.0, solar_peak),
            scale(self.forecast(|s| s.tou_price), 0.0, peak_price),
            scale(f, 0.0, 1.0),
            scale(w.tou_price * zone_power, 0.0, peak_price * max_power),
        ];
        x.extend((0..self.cfg.flow_levels.len()).map(|k| flag(k == a)));
        x
    }

    pub fn width(&self) -> usize {
        13 + self.cfg.flow_levels.len()
    }
}

impl Environment for HvacEnv {
    fn controllers(&self) -> usize {
        self.cfg.zones.len()
    }

    fn feature_width(&self) -> usize {
        self.width()
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        let params = WeatherParams {
            days: self.cfg.days + self.lookahead,
            ..self.cfg.weather.clone()
        };
        self.weather = weather_profile(labelled_seed(seed, "weather"), &params)?;
        self.temps = vec![self.cfg.initial_c; self.cfg.zones.len()];
        self.last = vec![0; self.cfg.zones.len()];
        self.step = 0;
        self.cost = 0.0;
        self.violation_steps = 0;
        self.violation_deg = 0.0;
        Ok(())
    }

    fn observe(&self) -> Option<Observation> {
        if self.step >= self.horizon() {
            return None;
        }
        let n_levels = self.cfg.flow_levels.len();
        Some(Observation {
            time: self.step as f64,
            controllers: (0..self.cfg.zones.len())
                .map(|i| (0..n_levels).map(|a| self.features(i, a)).collect())
                .collect(),
        })
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.step >= self.horizon() {
            return Err(Error::env("episode is over"));
        }
        let n = self.cfg.zones.len();
        if actions.len() != n {
            return Err(Error::env(format!("expected {n} flow levels, got {}", actions.len())));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.cfg.flow_levels.len()) {
            return Err(Error::env(format!("flow level {bad} does not exist")));
        }
        let flows: Vec<f64> = actions.iter().map(|&a| self.cfg.flow_levels[a]).collect();
        let w = self.weather[self.step];
        let energy_cost = w.tou_price * self.power_kw(&self.temps, &flows) * self.cfg.step_s / 3600.0;
        let total_flow: f64 = flows.iter().sum();
        self.temps = self.propagate(&self.temps, &flows, &w);
        let rewards = (0..n)
            .map(|i| {
                let v = band_violation(self.temps[i], self.cfg.band_low_c, self.cfg.band_high_c);
                if v > 0.0 {
                    self.violation_steps += 1;
                    self.violation_deg += v;
                }
                let share = if total_flow > 0.0 { flows[i] / total_flow } else { 1.0 / n as f64 };
                vec![RewardSegment::impulse(-self.cfg.lambda * v - energy_cost * share)]
            })
            .collect();
        self.cost += energy_cost;
        self.last = actions.to_vec();
        self.step += 1;
        Ok(StepOutcome { rewards })
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            steps: self.step,
            energy_or_cost: self.cost,
            violations: self.violation_rate(),
        }
    }

    /// Hysteresis thermostat: maximum flow above the band, none below,
    /// otherwise keep the previous level.
    fn baseline_actions(&self) -> Result<Vec<usize>> {
        let max = self.cfg.flow_levels.len() - 1;
        Ok(self
            .temps
            .iter()
            .zip(&self.last)
            .map(|(&t, &prev)| {
                if t > self.cfg.band_high_c {
                    max
                } else if t < self.cfg.band_low_c {
                    0
                } else if prev == max {
                    max
                } else {
                    0
                }
            })
            .collect())
    }
}
