//! Layered SC network evaluator.
//!
//! Each neuron is a row of XNOR multipliers feeding one APC (or a small
//! tree of APCs for wide fan-in) feeding a Btanh counter. Each layer's
//! weights are divided by a per-layer gain so the largest one spans the
//! full bipolar range, and the counter multiplies the gain back in, so the
//! neuron approximates `tanh(w . x)` on the original weights. The counter
//! span also tracks the APC's step variance, which the approximate pair
//! gates inflate above the fan-in.
//!
//! Activation streams feed the next layer directly; binary conversion only
//! happens at the network input and output unless
//! [`LayerRelay::Reencode`] is selected.

mod timing;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use timing::{
    delay, delay_fs, PipelineConfig, TimingReport, NON_PIPELINED_CLOCK_NS, NON_PIPELINED_FILL_NS,
    PIPELINED_CLOCK_NS,
};

use crate::bitstream::{encode, prescale, BitStream, Encoding, ScaleInfo, SngConfig, TAPS16};
use crate::error::{Error, Result};
use crate::ref_network::{OutputActivation, WeightSet};
use crate::sc_units::{btanh, xnor_multiply, ApcDesign, ApcVariant, SaturatedCounter};
use crate::seed::child_seed;

/// Widest single APC; wider fan-in is split across several APCs whose
/// counts are added in binary.
pub const MAX_APC_INPUTS: usize = 32;

/// Floor on the per-layer gain so all-zero layers still build.
const MIN_GAIN: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRelay {
    /// Decode each layer output and encode it again with a fresh generator.
    Reencode,
    /// Feed activation streams straight into the next layer.
    #[default]
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScConfig {
    #[serde(rename = "L")]
    pub len: usize,
    pub apc: ApcVariant,
    pub root_seed: u64,
    #[serde(default)]
    pub relay: LayerRelay,
    /// Stretch each layer's weights to the full bipolar range instead of
    /// only shrinking oversized ones.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl ScConfig {
    pub fn new(len: usize, root_seed: u64) -> Self {
        ScConfig {
            len,
            apc: ApcVariant::Improved,
            root_seed,
            relay: LayerRelay::Direct,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone)]
struct ScLayer {
    scale: ScaleInfo,
    /// Weights are encoded as `w / gain`; the counter restores the gain.
    gain: f64,
    /// Inputs per neuron including the bias input.
    fan_in: usize,
    /// Weight streams, `outputs x fan_in`.
    weights: Vec<Vec<BitStream>>,
    /// APCs covering consecutive input ranges.
    apcs: Vec<(usize, ApcDesign)>,
    counter: SaturatedCounter,
    linear_output: bool,
}

#[derive(Debug, Clone)]
pub struct ScNetwork {
    weights: WeightSet,
    cfg: ScConfig,
    layers: Vec<ScLayer>,
}

// stream-id spaces so weight, input and relay generators never coincide
const WEIGHT_STREAMS: u64 = 1 << 40;
const RELAY_STREAMS: u64 = 2 << 40;

fn split_fan_in(fan_in: usize) -> Vec<(usize, usize)> {
    let parts = fan_in.div_ceil(MAX_APC_INPUTS);
    let base = fan_in / parts;
    let extra = fan_in % parts;
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let n = base + usize::from(p < extra);
            let r = (start, n);
            start += n;
            r
        })
        .collect()
}

/// Generator for input `i` of a layer: inputs take even masks and weights
/// odd ones, so the two operands of every XNOR are different m-sequences.
fn operand_sng(root: u64, space: u64, layer: usize, row: usize, i: usize, odd: bool) -> SngConfig {
    let id = space + ((layer as u64) << 32) + ((row as u64) << 16) + i as u64;
    let seed = child_seed(root, id) % 0xffff + 1;
    let taps = TAPS16[(2 * i + usize::from(odd)) % TAPS16.len()];
    SngConfig::lfsr(16, seed).with_taps(taps)
}

impl ScNetwork {
    pub fn build(weights: &WeightSet, cfg: ScConfig) -> Result<Self> {
        weights.validate()?;
        if cfg.len == 0 || cfg.len as u64 > 0xffff {
            return Err(Error::Config(format!(
                "stream length {} outside 1..=65535",
                cfg.len
            )));
        }
        let n_layers = weights.layers.len();
        let layers = weights
            .layers
            .iter()
            .enumerate()
            .map(|(li, layer)| {
                let all: Vec<f64> = layer.weights.iter().chain(&layer.bias).copied().collect();
                let (_, scale) = prescale(&all)?;
                let gain = if cfg.normalize {
                    all.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(MIN_GAIN)
                } else {
                    scale.factor
                };
                let has_bias = !layer.bias.is_empty();
                let fan_in = layer.inputs + usize::from(has_bias);
                let rows = (0..layer.outputs)
                    .map(|o| {
                        let mut row: Vec<f64> = layer.row(o).to_vec();
                        if has_bias {
                            row.push(layer.bias[o]);
                        }
                        row.iter()
                            .enumerate()
                            .map(|(i, &w)| {
                                let sng = operand_sng(cfg.root_seed, WEIGHT_STREAMS, li, o, i, true);
                                encode((w / gain).clamp(-1.0, 1.0), cfg.len, Encoding::Bipolar, &sng)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let apcs = split_fan_in(fan_in)
                    .into_iter()
                    .map(|(start, n)| Ok((start, ApcDesign::new(n, cfg.apc)?)))
                    .collect::<Result<Vec<_>>>()?;
                let counter = SaturatedCounter::for_step_variance(
                    fan_in as u32,
                    apcs.iter().map(|(_, d)| d.step_variance()).sum(),
                    gain,
                )?;
                Ok(ScLayer {
                    scale,
                    gain,
                    fan_in,
                    weights: rows,
                    apcs,
                    counter,
                    linear_output: li + 1 == n_layers
                        && weights.spec.output == OutputActivation::Linear,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScNetwork {
            weights: weights.clone(),
            cfg,
            layers,
        })
    }

    pub fn config(&self) -> &ScConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    /// `(APC count, APC fan-in)` per layer; wide layers report every APC.
    pub fn apc_layout(&self) -> Vec<Vec<(usize, usize)>> {
        self.layers
            .iter()
            .map(|l| {
                l.apcs
                    .iter()
                    .map(|(_, d)| (l.weights.len(), d.n_inputs))
                    .collect()
            })
            .collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.scale.factor).collect()
    }

    /// Bipolar streams for a layer's inputs, bias input appended.
    fn layer_inputs(&self, li: usize, values: &[f64]) -> Result<Vec<BitStream>> {
        let mut streams = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let space = if li == 0 { 0 } else { RELAY_STREAMS };
                let sng = operand_sng(self.cfg.root_seed, space, li, 0, i, false);
                encode(v, self.cfg.len, Encoding::Bipolar, &sng)
            })
            .collect::<Result<Vec<_>>>()?;
        if self.layers[li].fan_in > values.len() {
            streams.push(BitStream::ones(self.cfg.len, Encoding::Bipolar)?);
        }
        Ok(streams)
    }

    fn with_bias(&self, li: usize, mut streams: Vec<BitStream>) -> Result<Vec<BitStream>> {
        if self.layers[li].fan_in > streams.len() {
            streams.push(BitStream::ones(self.cfg.len, Encoding::Bipolar)?);
        }
        Ok(streams)
    }

    /// One neuron: per-cycle APC counts summed over the APC tree.
    fn neuron_counts(&self, layer: &ScLayer, o: usize, inputs: &[BitStream]) -> Result<Vec<u32>> {
        let products = inputs
            .iter()
            .zip(&layer.weights[o])
            .map(|(x, w)| xnor_multiply(x, w))
            .collect::<Result<Vec<_>>>()?;
        let mut counts = vec![0u32; self.cfg.len];
        for (start, apc) in &layer.apcs {
            let refs: Vec<&BitStream> = products[*start..*start + apc.n_inputs].iter().collect();
            let out = apc.add(&refs)?;
            counts.iter_mut().zip(out.counts).for_each(|(c, k)| *c += k);
        }
        Ok(counts)
    }

    /// Output streams of every neuron in layer `li`; `None` entries mark
    /// linear outputs, whose values are returned separately.
    fn run_layer(&self, li: usize, inputs: &[BitStream]) -> Result<(Vec<BitStream>, Vec<f64>)> {
        let layer = &self.layers[li];
        let results = (0..layer.weights.len())
            .into_par_iter()
            .map(|o| {
                let counts = self.neuron_counts(layer, o, inputs)?;
                if layer.linear_output {
                    let total: u64 = counts.iter().map(|&c| c as u64).sum();
                    let sum = 2.0 * total as f64 / self.cfg.len as f64 - layer.fan_in as f64;
                    Ok((None, sum * layer.gain))
                } else {
                    let s = btanh(&counts, &layer.counter)?;
                    let v = s.decode();
                    Ok((Some(s), v))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let values = results.iter().map(|r| r.1).collect();
        let streams = results.into_iter().filter_map(|r| r.0).collect();
        Ok((streams, values))
    }

    /// Network output for a prescaled input vector.
    pub fn forward_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.weights.spec.inputs() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.weights.spec.inputs()
            )));
        }
        if let Some(&bad) = input.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Range {
                value: bad,
                encoding: Encoding::Bipolar,
            });
        }
        let mut streams = self.layer_inputs(0, input)?;
        let mut values = Vec::new();
        for li in 0..self.layers.len() {
            let (out_streams, out_values) = self.run_layer(li, &streams)?;
            values = out_values;
            if li + 1 < self.layers.len() {
                streams = match self.cfg.relay {
                    LayerRelay::Reencode => self.layer_inputs(li + 1, &values)?,
                    LayerRelay::Direct => self.with_bias(li + 1, out_streams)?,
                };
            }
        }
        Ok(values)
    }

    /// Scalar Q value with the timing of one inference.
    pub fn forward(&self, input: &[f64], pipeline: &PipelineConfig) -> Result<(f64, TimingReport)> {
        let out = self.forward_values(input)?;
        if out.len() != 1 {
            return Err(Error::Shape(format!("network has {} outputs, expected 1", out.len())));
        }
        Ok((out[0], TimingReport::new(self.cfg.len, pipeline)?))
    }
}

pub fn build_sc_network(weights: &WeightSet, cfg: ScConfig) -> Result<ScNetwork> {
    ScNetwork::build(weights, cfg)
}

pub fn sc_forward(
    net: &ScNetwork,
    input: &[f64],
    pipeline: &PipelineConfig,
) -> Result<(f64, TimingReport)> {
    net.forward(input, pipeline)
}

/// Binary to stochastic conversion of a value vector: prescale into
/// `[-1, 1]`, then encode each value with its own generator.
pub fn b2s(values: &[f64], len: usize, root_seed: u64) -> Result<(Vec<BitStream>, ScaleInfo)> {
    let (scaled, info) = prescale(values)?;
    let streams = scaled
        .iter()
        .enumerate()
        .map(|(i, &v)| encode(v, len, Encoding::Bipolar, &SngConfig::for_stream(root_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((streams, info))
}

/// Stochastic to binary conversion: decode and undo the prescale.
pub fn s2b(stream: &BitStream, scale: &ScaleInfo) -> f64 {
    scale.unscale(stream.decode())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ref_network::NetworkSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn benchmark_network_layout() {
        let ws = WeightSet::zeros(&NetworkSpec::new(&[26, 30, 1])).unwrap();
        let net = ScNetwork::build(&ws, ScConfig::new(64, 1)).unwrap();
        assert_eq!(net.apc_layout(), vec![vec![(30, 26)], vec![(1, 30)]]);
    }

    #[test]
    fn wide_fan_in_uses_apc_tree() {
        assert_eq!(split_fan_in(30), vec![(0, 30)]);
        assert_eq!(split_fan_in(70), vec![(0, 24), (24, 23), (47, 23)]);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let ws = WeightSet::random(&NetworkSpec::new(&[70, 2, 1]), &mut rng).unwrap();
        let net = ScNetwork::build(&ws, ScConfig::new(4096, 1)).unwrap();
        assert_eq!(net.apc_layout()[0].len(), 3);
        let x: Vec<f64> = (0..70).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let q = net.forward_values(&x).unwrap()[0];
        let exact = ws.forward(&x).unwrap();
        assert!((q - exact).abs() < 0.15, "{q} vs {exact}");
    }

    #[test]
    fn zero_weights_output_near_zero() {
        let ws = WeightSet::zeros(&NetworkSpec::new(&[26, 30, 1])).unwrap();
        let net = ScNetwork::build(&ws, ScConfig::new(1024, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let x: Vec<f64> = (0..26).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let (q, _) = net.forward(&x, &PipelineConfig::pipelined()).unwrap();
            assert!(q.abs() < 0.1, "{q}");
        }
    }

    #[test]
    fn deterministic_and_pipeline_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ws = WeightSet::random(&NetworkSpec::new(&[6, 5, 1]), &mut rng).unwrap();
        let net = ScNetwork::build(&ws, ScConfig::new(256, 3)).unwrap();
        let x = [0.1, -0.5, 0.9, 0.0, -1.0, 0.3];
        let (a, ta) = net.forward(&x, &PipelineConfig::pipelined()).unwrap();
        let (b, tb) = net.forward(&x, &PipelineConfig::non_pipelined()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(ta.delay_ns < tb.delay_ns);
    }

    #[test]
    fn input_errors() {
        let ws = WeightSet::zeros(&NetworkSpec::new(&[3, 1])).unwrap();
        let net = ScNetwork::build(&ws, ScConfig::new(64, 1)).unwrap();
        assert!(matches!(net.forward_values(&[0.0, 2.0, 0.0]), Err(Error::Range { .. })));
        assert!(matches!(net.forward_values(&[0.0]), Err(Error::Shape(_))));
        assert!(ScNetwork::build(&ws, ScConfig::new(0, 1)).is_err());
    }

    #[test]
    fn bias_becomes_extra_input() {
        let mut ws = WeightSet::zeros(&NetworkSpec::new(&[2, 1]).with_bias(true)).unwrap();
        ws.layers[0].bias[0] = 0.8;
        let net = ScNetwork::build(&ws, ScConfig::new(1024, 2)).unwrap();
        assert_eq!(net.apc_layout(), vec![vec![(1, 3)]]);
        let q = net.forward_values(&[0.0, 0.0]).unwrap()[0];
        assert!((q - 0.8f64.tanh()).abs() < 0.15, "{q}");
    }

    #[test]
    fn b2s_records_prescale_factor() {
        let (streams, info) = b2s(&[0.0, 3.0, -1.5], 1024, 4).unwrap();
        assert_eq!(info.factor, 3.0);
        assert!(s2b(&streams[0], &info).abs() < 0.15);
        assert!((s2b(&streams[1], &info) - 3.0).abs() < 1e-12);
    }
}
