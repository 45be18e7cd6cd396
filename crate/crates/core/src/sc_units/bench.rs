//! APC inaccuracy measurement.
//!
//! One trial draws `n` inputs and `n` weights uniformly from `[-1, 1]`,
//! encodes each into its own bipolar stream, multiplies pairs with XNOR and
//! sums the products with the APC under test. The SC inner product is the
//! bipolar decode of the APC's accumulated count, `2 C / L - n`. The trial
//! error is `|SC - exact| / 2n`, where `exact = sum(x_i * w_i)` and `2n` is
//! the width of the output range `[-n, n]`. The inaccuracy rate is the mean
//! trial error.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::apc::ApcDesign;
use super::xnor_multiply;
use crate::bitstream::{encode, BitStream, Encoding, SngConfig, TAPS16};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "# inaccuracy_pct = 100 * mean over trials of |SC inner product - exact inner product| / (2 * n_inputs); x, w ~ U[-1,1]";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InaccuracyTrial {
    pub sc: f64,
    pub exact: f64,
}

/// Runs one trial with generator seeds derived from `seed`.
pub fn inaccuracy_trial(
    design: &ApcDesign,
    len: usize,
    xs: &[f64],
    ws: &[f64],
    seed: u64,
) -> Result<InaccuracyTrial> {
    let n = design.n_inputs;
    let enc = |v: f64, stream: u64, taps: usize| -> Result<BitStream> {
        let s = crate::seed::child_seed(seed, stream) % 0xffff + 1;
        let cfg = SngConfig::lfsr(16, s).with_taps(TAPS16[taps % TAPS16.len()]);
        encode(v, len, Encoding::Bipolar, &cfg)
    };
    let products = (0..n)
        .map(|i| {
            let x = enc(xs[i], 2 * i as u64, 2 * i)?;
            let w = enc(ws[i], 2 * i as u64 + 1, 2 * i + 1)?;
            xnor_multiply(&x, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&BitStream> = products.iter().collect();
    let count = design.total_count(&refs)?;
    Ok(InaccuracyTrial {
        sc: 2.0 * count as f64 / len as f64 - n as f64,
        exact: xs.iter().zip(ws).map(|(x, w)| x * w).sum(),
    })
}

/// Mean normalized inner-product error of `design` at stream length `len`,
/// as a fraction (multiply by 100 for percent).
pub fn apc_inaccuracy<R: Rng>(
    design: &ApcDesign,
    len: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::arg(format!("need at least 100 trials, got {trials}")));
    }
    let n = design.n_inputs;
    // draw everything up front so the parallel map is order independent
    let inputs: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..trials)
        .map(|_| {
            let xs = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let ws = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            (xs, ws, rng.gen())
        })
        .collect();
    let errors = inputs
        .par_iter()
        .map(|(xs, ws, seed)| {
            inaccuracy_trial(design, len, xs, ws, *seed)
                .map(|t| (t.sc - t.exact).abs() / (2.0 * n as f64))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApcBenchRow {
    pub variant: String,
    pub n_inputs: usize,
    #[serde(rename = "L")]
    pub len: usize,
    pub trials: usize,
    pub inaccuracy_pct: f64,
}

/// CSV rendering: a comment line with the metric definition, then
/// `variant,n_inputs,L,trials,inaccuracy_pct`.
pub fn render_apc_report(rows: &[ApcBenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)
        .expect("csv output is utf-8");
    Ok(format!("{REPORT_HEADER}\n{body}"))
}
