//! Exact floating-point dense network: the trainer for Q-value regression
//! and the accuracy reference for the stochastic evaluator.
//!
//! Hidden layers use tanh. The output layer is tanh by default so outputs
//! share the bipolar range of the SC hardware; a linear output is available.

mod file;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use file::{SeedBlock, WeightFile, WeightFileLayer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Tanh,
    Linear,
}

/// Layer widths from input to output, e.g. `[26, 30, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub output: OutputActivation,
}

impl NetworkSpec {
    pub fn new(widths: &[usize]) -> Self {
        NetworkSpec {
            widths: widths.to_vec(),
            bias: false,
            output: OutputActivation::Tanh,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Shape(format!(
                "a network needs at least two layers, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Shape(format!(
                "layer widths must be positive, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }
}

/// One dense layer. `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    /// Empty when the network has no bias terms.
    pub bias: Vec<f64>,
}

impl Layer {
    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.inputs..(out + 1) * self.inputs]
    }

    fn zeroed_like(&self) -> Layer {
        Layer {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }
}

/// The weight set θ of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl WeightSet {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: if spec.bias { vec![0.0; w[1]] } else { Vec::new() },
            })
            .collect();
        Ok(WeightSet {
            spec: spec.clone(),
            layers,
        })
    }

    /// Uniform initialisation in `[-r, r]`, `r = 1 / sqrt(fan_in)`.
    pub fn random<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut ws = Self::zeros(spec)?;
        for layer in &mut ws.layers {
            let r = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-r..=r);
            }
        }
        Ok(ws)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.widths.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layers for widths {:?}",
                self.layers.len(),
                self.spec.widths
            )));
        }
        for (i, (l, w)) in self.layers.iter().zip(self.spec.widths.windows(2)).enumerate() {
            let bias_len = if self.spec.bias { w[1] } else { 0 };
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != bias_len
            {
                return Err(Error::Shape(format!(
                    "layer {i} is {}x{} with {} weights, spec wants {}x{}",
                    l.outputs,
                    l.inputs,
                    l.weights.len(),
                    w[1],
                    w[0]
                )));
            }
        }
        if let Some(bad) = self.layers.iter().flat_map(|l| l.params()).find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite weight {bad}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All activations, input first.
    fn activations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.spec.inputs() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.spec.inputs()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let y = (0..layer.outputs)
                .map(|o| {
                    let b = layer.bias.get(o).copied().unwrap_or(0.0);
                    let z: f64 = layer.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                    if li == last && self.spec.output == OutputActivation::Linear {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn forward_all(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(input)?.pop().expect("output layer"))
    }

    /// Scalar output of a single-output network.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if self.spec.outputs() != 1 {
            return Err(Error::Shape(format!(
                "forward expects one output, network has {}",
                self.spec.outputs()
            )));
        }
        Ok(self.forward_all(input)?[0])
    }

    /// Squared-error gradient of one sample, accumulated into `grad`.
    /// Returns the sample's squared error.
    fn accumulate_gradient(&self, input: &[f64], target: f64, grad: &mut WeightSet) -> Result<f64> {
        let acts = self.activations(input)?;
        let out = acts.last().expect("output")[0];
        let err = out - target;
        let last = self.layers.len() - 1;
        // dL/dz for the current layer; L = err^2
        let mut delta: Vec<f64> = vec![
            2.0 * err
                * if self.spec.output == OutputActivation::Linear {
                    1.0
                } else {
                    1.0 - out * out
                },
        ];
        for li in (0..=last).rev() {
            let layer = &self.layers[li];
            let x = &acts[li];
            let g = &mut grad.layers[li];
            for o in 0..layer.outputs {
                for i in 0..layer.inputs {
                    g.weights[o * layer.inputs + i] += delta[o] * x[i];
                }
                if let Some(b) = g.bias.get_mut(o) {
                    *b += delta[o];
                }
            }
            if li > 0 {
                delta = (0..layer.inputs)
                    .map(|i| {
                        let back: f64 = (0..layer.outputs).map(|o| delta[o] * layer.weight(o, i)).sum();
                        back * (1.0 - x[i] * x[i])
                    })
                    .collect();
            }
        }
        Ok(err * err)
    }

    /// Mean squared error over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[(Vec<f64>, f64)]) -> Result<(f64, WeightSet)> {
        if batch.is_empty() {
            return Err(Error::arg("empty training batch"));
        }
        let mut grad = WeightSet {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(Layer::zeroed_like).collect(),
        };
        let mut loss = 0.0;
        for (x, t) in batch {
            if !t.is_finite() {
                return Err(Error::Training(format!("non-finite target {t}")));
            }
            loss += self.accumulate_gradient(x, *t, &mut grad)?;
        }
        let scale = 1.0 / batch.len() as f64;
        for l in &mut grad.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= scale);
        }
        Ok((loss * scale, grad))
    }

    pub fn loss(&self, batch: &[(Vec<f64>, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in batch {
            let e = self.forward(x)? - t;
            total += e * e;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// One gradient step on the mean squared error of `batch`.
    pub fn train_minibatch(&self, batch: &[(Vec<f64>, f64)], cfg: &TrainConfig) -> Result<WeightSet> {
        cfg.validate()?;
        let (loss, grad) = self.loss_and_gradient(batch)?;
        let bad = grad
            .layers
            .iter()
            .enumerate()
            .flat_map(|(li, l)| l.params().map(move |g| (li, *g)))
            .find(|(_, g)| !g.is_finite());
        if let Some((li, g)) = bad {
            return Err(Error::Training(format!(
                "gradient entry {g} in layer {li} (batch loss {loss}, batch size {})",
                batch.len()
            )));
        }
        let mut next = self.clone();
        for (l, g) in next.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= cfg.learning_rate * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= cfg.learning_rate * d;
            }
        }
        Ok(next)
    }

    /// `cfg.epochs` passes over `data` in shuffled mini-batches. Returns the
    /// final full-data loss.
    pub fn fit<R: Rng>(&mut self, data: &[(Vec<f64>, f64)], cfg: &TrainConfig, rng: &mut R) -> Result<f64> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::arg("empty training set"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i].clone()));
                *self = self.train_minibatch(&batch, cfg)?;
            }
        }
        self.loss(data)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 1,
            loss: Loss::SquaredError,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}
