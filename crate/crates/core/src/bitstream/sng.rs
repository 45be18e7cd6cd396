//! Stochastic number generation.
//!
//! A stochastic number generator (SNG) compares a pseudo-random integer
//! sequence against a threshold derived from the probability to encode.
//! Both generator kinds emit values in `1..=2^w - 1`, so a threshold `t`
//! yields exactly `t` ones over one full period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::child_seed;

/// Maximal-length Galois feedback masks, indexed by register width.
/// Entry `w` has bit `w - 1` set; entries 0 and 1 are unused.
const MAXIMAL_TAPS: [u64; 25] = [
    0, 0, 0x3, 0x5, 0x9, 0x12, 0x21, 0x41, 0x8e, 0x108, 0x204, 0x402, 0x829, 0x100d, 0x2015,
    0x4001, 0x8016, 0x10004, 0x20013, 0x40013, 0x80004, 0x100002, 0x200001, 0x400010, 0x80000d,
];

pub const MAX_WIDTH: u32 = 24;

/// Distinct primitive feedback masks for 16-bit registers. Streams that meet
/// in one gate draw from different masks so they are different m-sequences,
/// not phase shifts of one.
pub const TAPS16: [u64; 8] = [0x8016, 0x801c, 0x8029, 0x80d0, 0x810a, 0x810c, 0x8112, 0x8142];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SngKind {
    Lfsr,
    Counter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SngConfig {
    pub kind: SngKind,
    pub width: u32,
    pub seed: u64,
    /// Galois feedback mask; ignored by the counter generator.
    pub taps: u64,
}

impl SngConfig {
    /// A maximal-length LFSR of the given width using the default taps.
    pub fn lfsr(width: u32, seed: u64) -> Self {
        let taps = if (2..=MAX_WIDTH).contains(&width) {
            MAXIMAL_TAPS[width as usize]
        } else {
            0
        };
        SngConfig {
            kind: SngKind::Lfsr,
            width,
            seed,
            taps,
        }
    }

    pub fn counter(width: u32, seed: u64) -> Self {
        SngConfig {
            kind: SngKind::Counter,
            width,
            seed,
            taps: 0,
        }
    }

    pub fn with_taps(mut self, taps: u64) -> Self {
        self.taps = taps;
        self
    }

    /// Configuration for stream number `stream` under a root seed: a 16-bit
    /// LFSR with a rotating primitive mask and a non-zero derived seed.
    pub fn for_stream(root: u64, stream: u64) -> Self {
        let seed = child_seed(root, stream) % 0xffff + 1;
        SngConfig::lfsr(16, seed).with_taps(TAPS16[(stream % TAPS16.len() as u64) as usize])
    }

    /// Largest value the generator emits, `2^width - 1`.
    pub fn max_value(&self) -> u64 {
        (1u64 << self.width) - 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_WIDTH).contains(&self.width) {
            return Err(Error::Config(format!(
                "generator width {} outside 2..={MAX_WIDTH}",
                self.width
            )));
        }
        if self.kind == SngKind::Lfsr {
            let top = 1u64 << (self.width - 1);
            if self.taps & top == 0 || self.taps >> self.width != 0 {
                return Err(Error::Config(format!(
                    "taps {:#x} do not describe a width-{} register",
                    self.taps, self.width
                )));
            }
            if self.seed & self.max_value() == 0 {
                return Err(Error::Config(
                    "zero LFSR state never leaves zero under XOR feedback".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Galois LFSR. One `step` shifts right by one and feeds back the mask when
/// the bit shifted out is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr {
    state: u64,
    taps: u64,
    width: u32,
}

impl Lfsr {
    pub fn new(width: u32, taps: u64, seed: u64) -> Result<Self> {
        let cfg = SngConfig {
            kind: SngKind::Lfsr,
            width,
            seed,
            taps,
        };
        cfg.validate()?;
        Ok(Lfsr {
            state: seed & cfg.max_value(),
            taps,
            width,
        })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Advances one clock and returns the output bit.
    #[inline]
    pub fn step(&mut self) -> bool {
        let out = self.state & 1 == 1;
        self.state >>= 1;
        if out {
            self.state ^= self.taps;
        }
        out
    }

    /// Advances `width` clocks so that consecutive words share no register
    /// history, then returns the full state.
    #[inline]
    pub fn next_word(&mut self) -> u64 {
        for _ in 0..self.width {
            self.step();
        }
        self.state
    }

    /// Number of clocks until the register returns to its current state.
    pub fn period(&self) -> u64 {
        let mut probe = self.clone();
        let start = self.state;
        let mut n = 0u64;
        loop {
            probe.step();
            n += 1;
            if probe.state == start || n > (1u64 << self.width) {
                return n;
            }
        }
    }
}

/// Pure one-clock transition on a raw state. Returns the output bit and the
/// next state.
pub fn lfsr_next(state: u64, cfg: &SngConfig) -> Result<(bool, u64)> {
    let mut lfsr = Lfsr::new(cfg.width, cfg.taps, state)?;
    let bit = lfsr.step();
    Ok((bit, lfsr.state))
}

/// A running generator built from an [`SngConfig`].
#[derive(Debug, Clone)]
pub enum Sng {
    Lfsr(Lfsr),
    Counter { value: u64, max: u64 },
}

impl Sng {
    pub fn new(cfg: &SngConfig) -> Result<Self> {
        cfg.validate()?;
        match cfg.kind {
            SngKind::Lfsr => Ok(Sng::Lfsr(Lfsr::new(cfg.width, cfg.taps, cfg.seed)?)),
            SngKind::Counter => {
                let max = cfg.max_value();
                Ok(Sng::Counter {
                    value: cfg.seed % max,
                    max,
                })
            }
        }
    }

    pub fn max_value(&self) -> u64 {
        match self {
            Sng::Lfsr(l) => (1u64 << l.width) - 1,
            Sng::Counter { max, .. } => *max,
        }
    }

    /// Next comparison value in `1..=max_value()`.
    #[inline]
    pub fn next_value(&mut self) -> u64 {
        match self {
            Sng::Lfsr(l) => l.next_word(),
            Sng::Counter { value, max } => {
                *value = *value % *max + 1;
                *value
            }
        }
    }

    /// Number of distinct values before the sequence repeats.
    pub fn period(&self) -> u64 {
        match self {
            Sng::Lfsr(l) => {
                // a width-step leap keeps the full period when gcd(w, 2^w - 1) = 1
                let p = l.period();
                p / gcd(p, l.width as u64)
            }
            Sng::Counter { max, .. } => *max,
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
