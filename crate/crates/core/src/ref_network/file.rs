//! JSON weight file shared by the exact trainer and the SC evaluator.
//!
//! ```json
//! {
//!   "version": 1,
//!   "bias": false,
//!   "output": "tanh",
//!   "layers": [
//!     { "inputs": 26, "outputs": 30, "weights": [..], "bias": [], "scale": 1.0 }
//!   ],
//!   "seeds": { "root": 7 }
//! }
//! ```
//!
//! `weights` is row-major (`outputs x inputs`). `scale` is the prescale
//! factor the SC evaluator uses for that layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, NetworkSpec, OutputActivation, WeightSet};
use crate::bitstream::prescale;
use crate::error::{Error, Result};

pub const WEIGHT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFileLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    /// Root of every stochastic number generator seed in the SC evaluator.
    pub root: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub version: u32,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub output: OutputActivation,
    pub layers: Vec<WeightFileLayer>,
    #[serde(default)]
    pub seeds: SeedBlock,
}

impl WeightFile {
    pub fn from_weights(ws: &WeightSet, seeds: SeedBlock) -> Result<Self> {
        ws.validate()?;
        let layers = ws
            .layers
            .iter()
            .map(|l| {
                let all: Vec<f64> = l.weights.iter().chain(&l.bias).copied().collect();
                let (_, info) = prescale(&all)?;
                Ok(WeightFileLayer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    scale: info.factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightFile {
            version: WEIGHT_FILE_VERSION,
            bias: ws.spec.bias,
            output: ws.spec.output,
            layers,
            seeds,
        })
    }

    pub fn to_weights(&self) -> Result<WeightSet> {
        if self.version != WEIGHT_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported weight file version {}",
                self.version
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("weight file has no layers".into()));
        }
        let mut widths = vec![self.layers[0].inputs];
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != *widths.last().expect("non-empty") {
                return Err(Error::Shape(format!(
                    "layer {i} takes {} inputs but the previous layer has {} outputs",
                    l.inputs,
                    widths.last().expect("non-empty")
                )));
            }
            if !(l.scale.is_finite() && l.scale >= 1.0) {
                return Err(Error::Shape(format!("layer {i} has invalid scale {}", l.scale)));
            }
            widths.push(l.outputs);
        }
        let ws = WeightSet {
            spec: NetworkSpec {
                widths,
                bias: self.bias,
                output: self.output,
            },
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn scales(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.scale).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn json_round_trip_preserves_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let spec = NetworkSpec::new(&[26, 30, 1]);
        let mut ws = WeightSet::random(&spec, &mut rng).unwrap();
        ws.layers[1].weights[3] = -2.5;
        let file = WeightFile::from_weights(&ws, SeedBlock::default()).unwrap();
        assert_eq!(file.scales(), vec![1.0, 2.5]);
        let back = WeightFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back.to_weights().unwrap(), ws);
    }

    #[test]
    fn unknown_keys_and_bad_shapes_rejected() {
        let text = r#"{"version":1,"layers":[],"extra":1}"#;
        assert!(WeightFile::from_json(text).is_err());
        let text = r#"{"version":1,"layers":[
            {"inputs":2,"outputs":3,"weights":[0,0,0,0,0,0],"scale":1.0},
            {"inputs":2,"outputs":1,"weights":[0,0],"scale":1.0}]}"#;
        let f = WeightFile::from_json(text).unwrap();
        assert!(matches!(f.to_weights(), Err(Error::Shape(_))));
    }
}
