//! Delay and throughput accounting.
//!
//! Delay is the stream length times the clock period. Time is kept in
//! integer femtoseconds so that delay is exactly linear in `L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FS_PER_NS: f64 = 1e6;

/// Pipelined clock with a register between each layer's adder and activation.
pub const PIPELINED_CLOCK_NS: f64 = 1.02;
/// Single-stage clock; with [`NON_PIPELINED_FILL_NS`] it reproduces the
/// measured non-pipelined delays at L = 256, 512 and 1024.
pub const NON_PIPELINED_CLOCK_NS: f64 = 1.61;
pub const NON_PIPELINED_FILL_NS: f64 = 0.31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// 2 when registers split addition from activation, 1 otherwise.
    pub stages_per_layer: u8,
    pub clock_ns: f64,
    /// Constant latency added once per inference.
    #[serde(default)]
    pub fill_ns: f64,
}

impl PipelineConfig {
    pub fn pipelined() -> Self {
        PipelineConfig {
            stages_per_layer: 2,
            clock_ns: PIPELINED_CLOCK_NS,
            fill_ns: 0.0,
        }
    }

    pub fn non_pipelined() -> Self {
        PipelineConfig {
            stages_per_layer: 1,
            clock_ns: NON_PIPELINED_CLOCK_NS,
            fill_ns: NON_PIPELINED_FILL_NS,
        }
    }

    /// Non-pipelined clock with no fill latency.
    pub fn non_pipelined_clock(clock_ns: f64) -> Self {
        PipelineConfig {
            stages_per_layer: 1,
            clock_ns,
            fill_ns: 0.0,
        }
    }

    pub fn is_pipelined(&self) -> bool {
        self.stages_per_layer == 2
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stages_per_layer, 1 | 2) {
            return Err(Error::Config(format!(
                "stages_per_layer must be 1 or 2, got {}",
                self.stages_per_layer
            )));
        }
        if !(self.clock_ns.is_finite() && self.clock_ns > 0.0) {
            return Err(Error::Config(format!("clock period must be positive, got {}", self.clock_ns)));
        }
        if !(self.fill_ns.is_finite() && self.fill_ns >= 0.0) {
            return Err(Error::Config(format!("fill latency must be non-negative, got {}", self.fill_ns)));
        }
        Ok(())
    }

    fn clock_fs(&self) -> u64 {
        (self.clock_ns * FS_PER_NS).round() as u64
    }

    fn fill_fs(&self) -> u64 {
        (self.fill_ns * FS_PER_NS).round() as u64
    }
}

/// Delay in integer femtoseconds.
pub fn delay_fs(len: usize, cfg: &PipelineConfig) -> u64 {
    len as u64 * cfg.clock_fs() + cfg.fill_fs()
}

/// Delay in nanoseconds: `L * T_clk` plus any fill latency.
pub fn delay(len: usize, cfg: &PipelineConfig) -> f64 {
    delay_fs(len, cfg) as f64 / FS_PER_NS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    pub delay_ns: f64,
    /// Inferences per nanosecond.
    pub throughput: f64,
    #[serde(rename = "L")]
    pub len: usize,
    pub pipelined: bool,
}

impl TimingReport {
    pub fn new(len: usize, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if len == 0 {
            return Err(Error::arg("stream length must be at least 1"));
        }
        let d = delay(len, cfg);
        Ok(TimingReport {
            delay_ns: d,
            throughput: 1.0 / d,
            len,
            pipelined: cfg.is_pipelined(),
        })
    }

    pub const CSV_HEADER: &'static str = "L,pipelined,clock_ns,delay_ns,throughput_per_ns";

    pub fn csv_row(&self, cfg: &PipelineConfig) -> String {
        format!(
            "{},{},{},{:.2},{:.6e}",
            self.len, self.pipelined, cfg.clock_ns, self.delay_ns, self.throughput
        )
    }
}
