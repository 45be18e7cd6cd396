//! Synthetic traces and their CSV files.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub arrival_s: f64,
    pub duration_s: f64,
    pub cpu: f64,
    pub mem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobTraceParams {
    pub jobs: usize,
    /// Poisson arrival rate in jobs per second.
    pub rate: f64,
    pub mean_duration_s: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub cpu: (f64, f64),
    pub mem: (f64, f64),
}

impl Default for JobTraceParams {
    fn default() -> Self {
        JobTraceParams {
            jobs: 100,
            rate: 1.0 / 30.0,
            mean_duration_s: 150.0,
            min_duration_s: 10.0,
            max_duration_s: 900.0,
            cpu: (0.1, 0.5),
            mem: (0.05, 0.4),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), max: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi <= max) {
        return Err(Error::Config(format!("{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi <= {max}")));
    }
    Ok(())
}

/// Poisson arrivals; durations exponential around the mean, clamped.
pub fn job_trace(seed: u64, p: &JobTraceParams) -> Result<Vec<JobSpec>> {
    if !(p.rate.is_finite() && p.rate > 0.0) {
        return Err(Error::Config(format!("arrival rate must be positive, got {}", p.rate)));
    }
    if !(p.mean_duration_s > 0.0 && p.min_duration_s > 0.0 && p.min_duration_s <= p.max_duration_s) {
        return Err(Error::Config("job durations must be positive with min <= max".into()));
    }
    check_range("cpu", p.cpu, 1.0)?;
    check_range("mem", p.mem, 1.0)?;
    let mut rng = rng_from(seed);
    let gap = Exp::new(p.rate).expect("positive rate");
    let dur = Exp::new(1.0 / p.mean_duration_s).expect("positive mean");
    let mut t = 0.0;
    Ok((0..p.jobs)
        .map(|_| {
            t += gap.sample(&mut rng);
            JobSpec {
                arrival_s: t,
                duration_s: dur.sample(&mut rng).clamp(p.min_duration_s, p.max_duration_s),
                cpu: rng.gen_range(p.cpu.0..=p.cpu.1),
                mem: rng.gen_range(p.mem.0..=p.mem.1),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub win_start: usize,
    /// Last slot the task may occupy.
    pub win_end: usize,
    pub dur: usize,
    pub kw: f64,
    /// Cost per slot of displacement outside the window.
    pub inconv: f64,
}

/// Non-interruptible household tasks over a 24-slot day.
pub fn task_set(seed: u64, n: usize, slots: usize) -> Result<Vec<TaskSpec>> {
    if n == 0 || slots < 4 {
        return Err(Error::Config(format!("task set needs tasks and at least 4 slots, got {n} / {slots}")));
    }
    let mut rng = rng_from(seed);
    Ok((0..n)
        .map(|task_id| {
            let dur = rng.gen_range(1..=3usize);
            let width = rng.gen_range(dur + 2..=(dur + 12).min(slots));
            let win_start = rng.gen_range(0..=slots - width);
            TaskSpec {
                task_id,
                win_start,
                win_end: win_start + width - 1,
                dur,
                kw: rng.gen_range(0.2..=1.5),
                inconv: rng.gen_range(0.02..=0.15),
            }
        })
        .collect())
}

/// One row per slot of the weather and tariff profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotProfile {
    pub slot: usize,
    pub tou_price: f64,
    pub pv_kw: f64,
    pub amb_c: f64,
    pub solar_wm2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherParams {
    pub slots_per_day: usize,
    pub days: usize,
    pub amb_mean_c: f64,
    pub amb_swing_c: f64,
    pub amb_noise_c: f64,
    pub peak_solar_wm2: f64,
    pub pv_peak_kw: f64,
    /// TOU price per kWh for each hour of the day.
    pub tou_hourly: Vec<f64>,
}

pub fn default_tou() -> Vec<f64> {
    (0..24)
        .map(|h| match h {
            0..=6 | 23 => 0.08,
            16..=20 => 0.28,
            _ => 0.14,
        })
        .collect()
}

impl Default for WeatherParams {
    fn default() -> Self {
        WeatherParams {
            slots_per_day: 24,
            days: 1,
            amb_mean_c: 28.0,
            amb_swing_c: 5.0,
            amb_noise_c: 0.5,
            peak_solar_wm2: 800.0,
            pv_peak_kw: 5.0,
            tou_hourly: default_tou(),
        }
    }
}

/// Sinusoidal daily ambient temperature (peak mid-afternoon) with AR(1)
/// noise, and a half-sine solar/PV curve that is zero between 18:00 and
/// 06:00; daily sky clearness varies between 0.6 and 1.
pub fn weather_profile(seed: u64, p: &WeatherParams) -> Result<Vec<SlotProfile>> {
    if p.slots_per_day == 0 || p.days == 0 || p.tou_hourly.len() != 24 {
        return Err(Error::Config("weather profile needs slots, days and 24 hourly prices".into()));
    }
    if p.tou_hourly.iter().any(|&x| !(x >= 0.0)) || p.pv_peak_kw < 0.0 || p.peak_solar_wm2 < 0.0 {
        return Err(Error::Config("prices and PV/solar peaks must be non-negative".into()));
    }
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, p.amb_noise_c.max(0.0)).expect("finite sd");
    let mut ar = 0.0;
    let mut clear = 1.0;
    let n = p.slots_per_day * p.days;
    Ok((0..n)
        .map(|slot| {
            let within = slot % p.slots_per_day;
            if within == 0 {
                clear = rng.gen_range(0.6..=1.0);
            }
            let hour = 24.0 * within as f64 / p.slots_per_day as f64;
            ar = 0.8 * ar + noise.sample(&mut rng);
            let amb = p.amb_mean_c + p.amb_swing_c * (std::f64::consts::TAU * (hour - 9.0) / 24.0).sin() + ar;
            let sun = if (6.0..18.0).contains(&hour) {
                (std::f64::consts::PI * (hour - 6.0) / 12.0).sin() * clear
            } else {
                0.0
            };
            SlotProfile {
                slot,
                tou_price: p.tou_hourly[hour as usize % 24],
                pv_kw: p.pv_peak_kw * sun,
                amb_c: amb,
                solar_wm2: p.peak_solar_wm2 * sun,
            }
        })
        .collect())
}

/// Writes rows as CSV with the struct field names as header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_trace_is_seeded_and_ordered() {
        let p = JobTraceParams::default();
        let a = job_trace(3, &p).unwrap();
        assert_eq!(a, job_trace(3, &p).unwrap());
        assert_ne!(a, job_trace(4, &p).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
        let bad = JobTraceParams { rate: 0.0, ..p };
        assert!(job_trace(1, &bad).is_err());
    }

    #[test]
    fn task_sets_have_requested_size() {
        for n in [100, 300, 500] {
            let t = task_set(9, n, 24).unwrap();
            assert_eq!(t.len(), n);
            assert!(t.iter().all(|t| t.win_end < 24 && t.win_end + 1 - t.win_start >= t.dur));
        }
    }

    #[test]
    fn pv_is_zero_at_night() {
        let w = weather_profile(1, &WeatherParams::default()).unwrap();
        for s in &w {
            if s.slot < 6 || s.slot >= 18 {
                assert_eq!(s.pv_kw, 0.0);
            }
            assert!(s.pv_kw >= 0.0);
        }
        assert!(w[12].pv_kw > 2.5);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.csv");
        let tasks = task_set(2, 5, 24).unwrap();
        write_csv(&path, &tasks).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("task_id,win_start,win_end,dur,kw,inconv\n"));
        assert_eq!(read_csv::<TaskSpec>(&path).unwrap(), tasks);
    }
}
