//! Simulated control problems for the Q agent: cloud job placement,
//! residential task scheduling and multi-zone HVAC.

pub mod cloud;
pub mod grid;
pub mod hvac;
pub mod traces;

pub use cloud::{CloudConfig, CloudEnv, GroupEncoder, ServerMode};
pub use grid::{GridConfig, GridEnv, GRID_FEATURES};
pub use hvac::{HvacConfig, HvacEnv, ZoneParams};

use crate::error::{Error, Result};

pub const IDLE_POWER_W: f64 = 87.0;
pub const PEAK_POWER_W: f64 = 145.0;

/// Server power at CPU utilization `u` with the default idle/peak anchors.
pub fn server_power(u: f64) -> Result<f64> {
    server_power_with(u, IDLE_POWER_W, PEAK_POWER_W)
}

/// `idle + (peak - idle) (2u - u^1.4)`.
pub fn server_power_with(u: f64, idle: f64, peak: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::arg(format!("utilization {u} outside [0, 1]")));
    }
    Ok(idle + (peak - idle) * (2.0 * u - u.powf(1.4)))
}

/// Power drawn from the grid: load not covered by PV.
pub fn grid_power(load_kw: f64, pv_kw: f64) -> Result<f64> {
    if !(load_kw >= 0.0 && pv_kw >= 0.0) {
        return Err(Error::arg(format!("grid power needs non-negative inputs, got load {load_kw}, pv {pv_kw}")));
    }
    Ok((load_kw - pv_kw).max(0.0))
}

/// Maps `x` in `[lo, hi]` to `[-1, 1]`, clamped.
pub(crate) fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

pub(crate) fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_anchors() {
        assert_eq!(server_power(0.0).unwrap(), 87.0);
        assert_eq!(server_power(1.0).unwrap(), 145.0);
        assert!((server_power(0.5).unwrap() - 123.02).abs() < 0.005);
        assert!(server_power(-0.01).is_err());
        assert!(server_power(1.01).is_err());
        assert!(server_power(f64::NAN).is_err());
    }

    #[test]
    fn grid_power_cases() {
        assert_eq!(grid_power(2.0, 3.0).unwrap(), 0.0);
        assert_eq!(grid_power(5.0, 2.0).unwrap(), 3.0);
        assert_eq!(grid_power(2.0, 2.0).unwrap(), 0.0);
        assert!(grid_power(-1.0, 0.0).is_err());
    }
}
