//! Gate-level stochastic arithmetic: XNOR multiplication, OR/MUX/APC
//! addition and FSM tanh activations.

mod activation;
mod apc;
mod bench;

pub use activation::{btanh, stanh, SaturatedCounter, StanhFsm};
pub use apc::{
    apc_add, count_width, ApcDesign, ApcOutput, ApcVariant, PairGate, PairUnit, TreeLogic,
};
pub use bench::{apc_inaccuracy, render_apc_report, ApcBenchRow, InaccuracyTrial};

use crate::bitstream::{BitStream, Encoding, Sng, SngConfig};
use crate::error::{Error, Result};

/// Bipolar multiplication: bitwise XNOR.
pub fn xnor_multiply(a: &BitStream, b: &BitStream) -> Result<BitStream> {
    for s in [a, b] {
        if s.encoding() != Encoding::Bipolar {
            return Err(Error::EncodingMismatch {
                left: s.encoding(),
                right: Encoding::Bipolar,
            });
        }
    }
    a.zip_words(b, |x, y| !(x ^ y))
}

fn check_set(streams: &[&BitStream]) -> Result<()> {
    let first = streams
        .first()
        .ok_or_else(|| Error::arg("adder needs at least one input stream"))?;
    streams[1..]
        .iter()
        .try_for_each(|s| first.check_compatible(s))
}

/// Bitwise OR of all inputs. Saturates quickly; kept for comparison only.
pub fn or_add(streams: &[&BitStream]) -> Result<BitStream> {
    check_set(streams)?;
    let mut acc = streams[0].clone();
    for s in &streams[1..] {
        acc = acc.zip_words(s, |x, y| x | y)?;
    }
    Ok(acc)
}

/// Scaled addition: every cycle a uniformly selected input is copied to the
/// output, so the output carries `1/n` of the sum.
pub fn mux_add(streams: &[&BitStream], select: &SngConfig) -> Result<BitStream> {
    check_set(streams)?;
    let mut sng = Sng::new(select)?;
    let n = streams.len() as u64;
    let max = sng.max_value();
    let len = streams[0].len();
    let bits: Vec<bool> = (0..len)
        .map(|i| {
            // values are uniform on 1..=max; split that range into n near-equal bins
            let sel = ((sng.next_value() - 1) * n / max) as usize;
            streams[sel].bit(i)
        })
        .collect();
    BitStream::from_bits(&bits, streams[0].encoding())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::encode;

    fn stream(v: f64, seed: u64, taps: usize) -> BitStream {
        let cfg = SngConfig::lfsr(16, seed).with_taps(crate::bitstream::TAPS16[taps]);
        encode(v, 1024, Encoding::Bipolar, &cfg).unwrap()
    }

    #[test]
    fn xnor_identities() {
        let s = stream(0.3, 11, 0);
        let one = BitStream::ones(1024, Encoding::Bipolar).unwrap();
        let zero = BitStream::zeros(1024, Encoding::Bipolar).unwrap();
        assert_eq!(xnor_multiply(&one, &s).unwrap(), s);
        assert_eq!(xnor_multiply(&zero, &s).unwrap(), s.complement());
    }

    #[test]
    fn xnor_of_independent_halves() {
        let a = stream(0.5, 0x1234, 1);
        let b = stream(0.5, 0x4321, 5);
        let z = xnor_multiply(&a, &b).unwrap().decode();
        assert!((z - 0.25).abs() <= 0.07, "{z}");
    }

    #[test]
    fn xnor_rejects_mismatch() {
        let a = BitStream::ones(8, Encoding::Bipolar).unwrap();
        let b = BitStream::ones(9, Encoding::Bipolar).unwrap();
        assert!(xnor_multiply(&a, &b).is_err());
        let u = BitStream::ones(8, Encoding::Unipolar).unwrap();
        assert!(xnor_multiply(&a, &u).is_err());
    }

    #[test]
    fn or_of_zeros_is_zero() {
        let z = BitStream::zeros(100, Encoding::Unipolar).unwrap();
        assert_eq!(or_add(&[&z, &z, &z]).unwrap().popcount(), 0);
        assert!(or_add(&[]).is_err());
    }

    #[test]
    fn mux_of_identical_streams_is_identity() {
        let s = stream(-0.4, 77, 2);
        let out = mux_add(&[&s, &s, &s, &s], &SngConfig::lfsr(16, 5)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn mux_of_four_unipolar_streams() {
        let streams: Vec<BitStream> = (0..4)
            .map(|i| {
                let cfg = SngConfig::for_stream(42, i);
                encode(0.4, 1024, Encoding::Unipolar, &cfg).unwrap()
            })
            .collect();
        let refs: Vec<&BitStream> = streams.iter().collect();
        let out = mux_add(&refs, &SngConfig::lfsr(16, 999)).unwrap();
        assert!((out.decode() - 0.4).abs() <= 0.08, "{}", out.decode());
    }
}
