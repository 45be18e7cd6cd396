//! FSM-based tanh units.
//!
//! [`StanhFsm`] takes a bipolar stream and walks a `K`-state chain; its
//! output approximates `tanh(K/2 * x)`. [`SaturatedCounter`] plays the same
//! role for the binary counts an APC produces (Btanh).

use crate::bitstream::{BitStream, Encoding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StanhFsm {
    states: u32,
    state: u32,
}

impl StanhFsm {
    /// `states` must be even and at least 2. The machine starts in the
    /// lowest state of the right half.
    pub fn new(states: u32) -> Result<Self> {
        if states < 2 || states % 2 != 0 {
            return Err(Error::arg(format!(
                "Stanh needs an even state count >= 2, got {states}"
            )));
        }
        Ok(StanhFsm {
            states,
            state: states / 2,
        })
    }

    pub fn states(&self) -> u32 {
        self.states
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Emits the output for the current state, then moves one state up on a
    /// 1 and one down on a 0, saturating at both ends.
    #[inline]
    pub fn clock(&mut self, bit: bool) -> bool {
        let out = self.state >= self.states / 2;
        if bit {
            self.state = (self.state + 1).min(self.states - 1);
        } else {
            self.state = self.state.saturating_sub(1);
        }
        out
    }
}

pub fn stanh(input: &BitStream, states: u32) -> Result<BitStream> {
    if input.encoding() != Encoding::Bipolar {
        return Err(Error::EncodingMismatch {
            left: input.encoding(),
            right: Encoding::Bipolar,
        });
    }
    let mut fsm = StanhFsm::new(states)?;
    let bits: Vec<bool> = input.bits().map(|b| fsm.clock(b)).collect();
    BitStream::from_bits(&bits, Encoding::Bipolar)
}

const BOUNDARY_OVERSHOOT: f64 = 0.5826;

/// Saturating up/down counter converting per-cycle APC counts into a
/// bipolar stream.
///
/// Each cycle the counter moves by `2 * count - n` (ones minus zeros among
/// the `n` APC inputs) and saturates in `0..=span`. The output bit is 1
/// above the centre `span / 2`, 0 below it, and alternates while the
/// counter rests exactly on the centre. With `span = 2 v g`, where `v` is
/// the per-cycle variance of the step, the output approximates
/// `tanh(g * y)` for the bipolar inner product `y` seen by the APC. An
/// exact counter over near-zero products has `v = n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturatedCounter {
    width: u32,
    span: u32,
    value: u32,
    fan_in: u32,
    tie: bool,
}

impl SaturatedCounter {
    /// Counter for an `fan_in`-input APC with the given gain. The register
    /// is `ceil(log2(fan_in)) + 1` bits wide unless the span needs more.
    pub fn for_fan_in(fan_in: u32, gain: f64) -> Result<Self> {
        Self::for_step_variance(fan_in, fan_in as f64, gain)
    }

    /// Counter whose span matches an APC with the given step variance
    /// (see [`ApcDesign::step_variance`](super::ApcDesign::step_variance)).
    pub fn for_step_variance(fan_in: u32, variance: f64, gain: f64) -> Result<Self> {
        if fan_in == 0 {
            return Err(Error::arg("counter fan-in must be positive"));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::arg(format!("counter gain must be positive, got {gain}")));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::arg(format!("step variance must be positive, got {variance}")));
        }
        // a reflected walk overshoots each wall by about 0.583 step deviations
        let target = 2.0 * variance * gain - 2.0 * BOUNDARY_OVERSHOOT * variance.sqrt();
        let half = ((target / 2.0).round().max(1.0)) as u32;
        let span = 2 * half;
        let width = (fan_in.next_power_of_two().trailing_zeros() + 1)
            .max(32 - span.leading_zeros());
        Self::new(width, span, fan_in)
    }

    pub fn new(width: u32, span: u32, fan_in: u32) -> Result<Self> {
        if width == 0 || width > 31 {
            return Err(Error::arg(format!("counter width {width} unsupported")));
        }
        if span < 2 || span % 2 != 0 || span as u64 >= 1u64 << width {
            return Err(Error::arg(format!(
                "counter needs an even span in 2..2^{width}, got {span}"
            )));
        }
        Ok(SaturatedCounter {
            width,
            span,
            value: span / 2,
            fan_in,
            tie: false,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Largest counter value; the centre is `span / 2`.
    pub fn span(&self) -> u32 {
        self.span
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn fan_in(&self) -> u32 {
        self.fan_in
    }

    /// Emits the output for the current value, then applies the step for `count`.
    #[inline]
    pub fn clock(&mut self, count: u32) -> bool {
        let centre = self.span / 2;
        let out = match self.value.cmp(&centre) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                self.tie = !self.tie;
                self.tie
            }
        };
        let step = 2 * count as i64 - self.fan_in as i64;
        self.value = (self.value as i64 + step).clamp(0, self.span as i64) as u32;
        out
    }
}

pub fn btanh(counts: &[u32], counter: &SaturatedCounter) -> Result<BitStream> {
    let n = counter.fan_in();
    if let Some(&bad) = counts.iter().find(|&&c| c > n) {
        return Err(Error::arg(format!("count {bad} exceeds APC fan-in {n}")));
    }
    let mut c = counter.clone();
    let bits: Vec<bool> = counts.iter().map(|&k| c.clock(k)).collect();
    BitStream::from_bits(&bits, Encoding::Bipolar)
}
