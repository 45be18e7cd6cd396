//! Packed stochastic bit-streams.
//!
//! A [`BitStream`] stores `len` bits in `u64` words, least significant bit
//! first. Bits past `len` in the last word are always zero, so word-wise
//! popcounts never need masking.

mod sng;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use sng::{lfsr_next, Lfsr, Sng, SngConfig, SngKind, MAX_WIDTH, TAPS16};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `x = P(X=1)`, range `[0, 1]`.
    Unipolar,
    /// `x = 2 P(X=1) - 1`, range `[-1, 1]`.
    Bipolar,
}

impl Encoding {
    pub fn range(self) -> (f64, f64) {
        match self {
            Encoding::Unipolar => (0.0, 1.0),
            Encoding::Bipolar => (-1.0, 1.0),
        }
    }

    /// Probability of a one for `value`.
    pub fn probability(self, value: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&value) {
            return Err(Error::Range {
                value,
                encoding: self,
            });
        }
        Ok(match self {
            Encoding::Unipolar => value,
            Encoding::Bipolar => (value + 1.0) / 2.0,
        })
    }

    /// Value carried by a stream with `ones` ones out of `len` bits.
    pub fn value(self, ones: usize, len: usize) -> f64 {
        let p = ones as f64 / len as f64;
        match self {
            Encoding::Unipolar => p,
            Encoding::Bipolar => 2.0 * p - 1.0,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Unipolar => "unipolar",
            Encoding::Bipolar => "bipolar",
        })
    }
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unipolar" => Ok(Encoding::Unipolar),
            "bipolar" => Ok(Encoding::Bipolar),
            other => Err(Error::arg(format!("unknown encoding {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitStream {
    words: Vec<u64>,
    len: usize,
    encoding: Encoding,
}

#[inline]
fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitStream {
    pub fn zeros(len: usize, encoding: Encoding) -> Result<Self> {
        if len == 0 {
            return Err(Error::arg("stream length must be at least 1"));
        }
        Ok(BitStream {
            words: vec![0; word_count(len)],
            len,
            encoding,
        })
    }

    pub fn ones(len: usize, encoding: Encoding) -> Result<Self> {
        let mut s = Self::zeros(len, encoding)?;
        s.words.iter_mut().for_each(|w| *w = u64::MAX);
        s.clear_tail();
        Ok(s)
    }

    /// Builds a stream from packed words; bits past `len` are discarded.
    pub fn from_words(mut words: Vec<u64>, len: usize, encoding: Encoding) -> Result<Self> {
        if len == 0 {
            return Err(Error::arg("stream length must be at least 1"));
        }
        if words.len() != word_count(len) {
            return Err(Error::arg(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        Ok(BitStream {
            words,
            len,
            encoding,
        })
    }

    pub fn from_bits(bits: &[bool], encoding: Encoding) -> Result<Self> {
        let mut s = Self::zeros(bits.len(), encoding)?;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(s)
    }

    /// Parses a string of `0`/`1` characters, first character = first bit.
    pub fn parse(text: &str, encoding: Encoding) -> Result<Self> {
        let bits = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::arg(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits, encoding)
    }

    fn clear_tail(&mut self) {
        let mask = tail_mask(self.len);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn decode(&self) -> f64 {
        self.encoding.value(self.popcount(), self.len)
    }

    /// Same bits reinterpreted under another encoding.
    pub fn reinterpret(&self, encoding: Encoding) -> Self {
        BitStream {
            encoding,
            ..self.clone()
        }
    }

    pub fn complement(&self) -> Self {
        let mut out = BitStream {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
            encoding: self.encoding,
        };
        out.clear_tail();
        out
    }

    pub(crate) fn check_compatible(&self, other: &BitStream) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        if self.encoding != other.encoding {
            return Err(Error::EncodingMismatch {
                left: self.encoding,
                right: other.encoding,
            });
        }
        Ok(())
    }

    /// Word-wise combination of two compatible streams.
    pub fn zip_words(
        &self,
        other: &BitStream,
        op: impl Fn(u64, u64) -> u64,
    ) -> Result<BitStream> {
        self.check_compatible(other)?;
        let mut out = BitStream {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| op(a, b))
                .collect(),
            len: self.len,
            encoding: self.encoding,
        };
        out.clear_tail();
        Ok(out)
    }

    /// Debug dump: `L=<n> enc=<encoding>` followed by one hex word per line.
    pub fn to_hex_dump(&self) -> String {
        let mut out = format!("L={} enc={}\n", self.len, self.encoding);
        for w in &self.words {
            out.push_str(&format!("{w:016x}\n"));
        }
        out
    }

    pub fn from_hex_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::arg("empty stream dump"))?;
        let mut len = None;
        let mut encoding = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("L", v)) => {
                    len = Some(
                        v.parse::<usize>()
                            .map_err(|e| Error::arg(format!("bad length {v:?}: {e}")))?,
                    )
                }
                Some(("enc", v)) => encoding = Some(v.parse::<Encoding>()?),
                _ => return Err(Error::arg(format!("unexpected header field {field:?}"))),
            }
        }
        let (len, encoding) = match (len, encoding) {
            (Some(l), Some(e)) => (l, e),
            _ => return Err(Error::arg("header needs L= and enc=")),
        };
        let words = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                u64::from_str_radix(l.trim(), 16)
                    .map_err(|e| Error::arg(format!("bad hex word {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_words(words, len, encoding)
    }
}

impl fmt::Display for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Encodes `value` into `len` bits, continuing from the generator's state.
/// Bit `i` is 1 iff the generator's `i`-th value does not exceed the
/// threshold `round(P(X=1) * max_value)`.
pub fn encode_with(
    value: f64,
    len: usize,
    encoding: Encoding,
    sng: &mut Sng,
) -> Result<BitStream> {
    let p = encoding.probability(value)?;
    let max = sng.max_value();
    if len as u64 > max {
        return Err(Error::Config(format!(
            "generator period {max} is shorter than stream length {len}"
        )));
    }
    let threshold = (p * max as f64).round() as u64;
    let mut out = BitStream::zeros(len, encoding)?;
    for (wi, word) in out.words.iter_mut().enumerate() {
        let bits = (len - wi * 64).min(64);
        let mut w = 0u64;
        for b in 0..bits {
            if sng.next_value() <= threshold {
                w |= 1 << b;
            }
        }
        *word = w;
    }
    Ok(out)
}

/// Encodes `value` with a fresh generator built from `cfg`.
pub fn encode(value: f64, len: usize, encoding: Encoding, cfg: &SngConfig) -> Result<BitStream> {
    let mut sng = Sng::new(cfg)?;
    encode_with(value, len, encoding, &mut sng)
}

pub fn decode(stream: &BitStream) -> f64 {
    stream.decode()
}

/// Scale bookkeeping for values brought into the encodable range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub factor: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ScaleInfo {
    pub fn identity() -> Self {
        ScaleInfo {
            factor: 1.0,
            lo: -1.0,
            hi: 1.0,
        }
    }

    pub fn scale(&self, v: f64) -> f64 {
        v / self.factor
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * self.factor
    }
}

/// Divides every value by `max(1, max |v|)`.
pub fn prescale(values: &[f64]) -> Result<(Vec<f64>, ScaleInfo)> {
    if values.is_empty() {
        return Err(Error::arg("cannot prescale an empty sequence"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("non-finite value {bad} in prescale input")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let info = ScaleInfo { factor, lo, hi };
    Ok((values.iter().map(|&v| info.scale(v)).collect(), info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_stream_decodes_to_point_two() {
        let s = BitStream::parse("1101001011", Encoding::Bipolar).unwrap();
        assert_eq!(s.popcount(), 6);
        assert!((s.decode() - 0.2).abs() < 1e-12);
        assert_eq!(s.to_string(), "1101001011");
    }

    #[test]
    fn full_period_encoding_is_exact() {
        // over one full generator period the ones count equals the threshold
        let s = encode(0.2, 15, Encoding::Bipolar, &SngConfig::counter(4, 0)).unwrap();
        assert_eq!(s.popcount(), 9);
        assert!((s.decode() - 0.2).abs() < 1e-12);
        let s = encode(0.2, 1023, Encoding::Bipolar, &SngConfig::lfsr(10, 77)).unwrap();
        assert_eq!(s.popcount(), 614);
    }

    #[test]
    fn extremes_are_forced() {
        for len in [1, 63, 64, 65, 1000] {
            let cfg = SngConfig::lfsr(16, 1234);
            let one = encode(1.0, len, Encoding::Bipolar, &cfg).unwrap();
            assert_eq!(one.popcount(), len);
            let zero = encode(-1.0, len, Encoding::Bipolar, &cfg).unwrap();
            assert_eq!(zero.popcount(), 0);
        }
        let ones = BitStream::ones(64, Encoding::Unipolar).unwrap();
        assert_eq!(ones.decode(), 1.0);
    }

    #[test]
    fn out_of_range_names_encoding() {
        let err = encode(1.5, 8, Encoding::Bipolar, &SngConfig::lfsr(8, 1)).unwrap_err();
        assert!(err.to_string().contains("bipolar"));
        let err = encode(-0.1, 8, Encoding::Unipolar, &SngConfig::lfsr(8, 1)).unwrap_err();
        assert!(err.to_string().contains("unipolar"));
    }

    #[test]
    fn stream_longer_than_period_rejected() {
        let err = encode(0.0, 300, Encoding::Bipolar, &SngConfig::lfsr(8, 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_length_rejected() {
        assert!(BitStream::zeros(0, Encoding::Bipolar).is_err());
    }

    #[test]
    fn prescale_examples() {
        let (v, info) = prescale(&[0.5, -0.25]).unwrap();
        assert_eq!(v, vec![0.5, -0.25]);
        assert_eq!(info.factor, 1.0);
        let (v, info) = prescale(&[2.0, -4.0]).unwrap();
        assert_eq!(v, vec![0.5, -1.0]);
        assert_eq!(info.factor, 4.0);
        assert_eq!((info.lo, info.hi), (-4.0, 2.0));
        assert!(prescale(&[]).is_err());
        assert!(prescale(&[f64::NAN]).is_err());
    }

    #[test]
    fn hex_dump_round_trip() {
        let s = encode(0.3, 130, Encoding::Bipolar, &SngConfig::lfsr(16, 99)).unwrap();
        let dump = s.to_hex_dump();
        assert!(dump.starts_with("L=130 enc=bipolar\n"));
        assert_eq!(BitStream::from_hex_dump(&dump).unwrap(), s);
        assert!(BitStream::from_hex_dump("L=4\n0").is_err());
    }

    #[test]
    fn mixed_encodings_are_detected() {
        let a = BitStream::ones(8, Encoding::Bipolar).unwrap();
        let b = BitStream::ones(8, Encoding::Unipolar).unwrap();
        assert!(matches!(
            a.zip_words(&b, |x, y| x & y),
            Err(Error::EncodingMismatch { .. })
        ));
        let c = BitStream::ones(9, Encoding::Bipolar).unwrap();
        assert!(matches!(
            a.zip_words(&c, |x, y| x & y),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn complement_keeps_tail_clear() {
        let s = BitStream::zeros(70, Encoding::Bipolar).unwrap();
        let c = s.complement();
        assert_eq!(c.popcount(), 70);
        assert_eq!(c.decode(), 1.0);
    }
}
