//! Minimal feedforward/TDNN engine: frame classifiers with temporal context
//! splicing, hidden-activation capture, SGD training, and fine-tuning.
//!
//! Layers are dense affine transforms over *spliced* inputs: the input to a
//! layer at frame `t` is the concatenation of the previous layer's outputs at
//! frames `t + o` for each context offset `o` (edge frames clamp to the
//! nearest valid frame). All math is `f64` and single-threaded, so results
//! are bit-reproducible for a given seed.

mod forward;
mod grad;
mod train;

pub use forward::{forward, hidden_activations, ActivationTrace};
pub(crate) use forward::{apply_layer, softmax_in_place};
pub use grad::{grad_check, CheckLoss};
pub use train::{fine_tune, frame_accuracy, mean_cross_entropy, train_supervised, Sample};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Elementwise activation applied after the affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    /// Wire code used by the FLAM format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Shape and behaviour of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Width of the spliced input: previous width times `context.len()`.
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Frame offsets concatenated before the affine transform, e.g. `[-1, 0, 1]`.
    pub context: Vec<i32>,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation, context: Vec<i32>) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
            context,
        }
    }

    /// Per-offset slice width of the spliced input.
    pub fn base_dim(&self) -> usize {
        self.input_dim / self.context.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        if self.context.is_empty() {
            return Err(Error::Config("layer context must be non-empty".into()));
        }
        if !self.context.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "context offsets must be strictly increasing: {:?}",
                self.context
            )));
        }
        if !self.context.contains(&0) {
            return Err(Error::Config(format!(
                "context must include offset 0: {:?}",
                self.context
            )));
        }
        if self.input_dim % self.context.len() != 0 {
            return Err(Error::Config(format!(
                "input_dim {} not divisible by context length {}",
                self.input_dim,
                self.context.len()
            )));
        }
        Ok(())
    }
}

/// One dense layer: weights are row-major with shape `(output_dim, input_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    /// Zero-initialized layer.
    pub fn zeros(spec: LayerSpec) -> Self {
        let (nin, nout) = (spec.input_dim, spec.output_dim);
        Layer {
            spec,
            weights: vec![0.0; nin * nout],
            bias: vec![0.0; nout],
        }
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.weights.len() != self.spec.input_dim * self.spec.output_dim {
            return Err(Error::Dimension(format!(
                "weight matrix has {} entries, expected {}x{}",
                self.weights.len(),
                self.spec.output_dim,
                self.spec.input_dim
            )));
        }
        if self.bias.len() != self.spec.output_dim {
            return Err(Error::Dimension(format!(
                "bias has {} entries, expected {}",
                self.bias.len(),
                self.spec.output_dim
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite layer parameters".into()));
        }
        Ok(())
    }
}

/// Ordered layer stack with identity bookkeeping for the model registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub model_id: String,
    pub parent_id: Option<String>,
}

impl ModelParams {
    /// Feature dimension the model expects per input frame.
    pub fn feature_dim(&self) -> usize {
        self.layers[0].spec.base_dim()
    }

    /// Number of hidden layers (all layers except the final one).
    pub fn n_hidden(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_dim)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    /// Checks layer chaining, softmax placement, and parameter finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let last = self.layers.len() - 1;
        let mut prev_out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.spec.activation == Activation::Softmax && i != last {
                return Err(Error::Config(format!(
                    "softmax on non-final layer {i}"
                )));
            }
            if let Some(prev) = prev_out {
                let expect = prev * layer.spec.context.len();
                if layer.spec.input_dim != expect {
                    return Err(Error::Dimension(format!(
                        "layer {i} input_dim {} != previous output {} x context {}",
                        layer.spec.input_dim,
                        prev,
                        layer.spec.context.len()
                    )));
                }
            }
            prev_out = Some(layer.spec.output_dim);
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Checks that two models share the same layer shapes.
    pub fn same_topology(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.spec == b.spec)
    }
}

/// Hyperparameters for supervised training and fine-tuning.
///
/// `batch_size` counts utterances per SGD step; the seed fully determines
/// initialization and shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Convenience description of the bench's frame-classifier stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub feature_dim: usize,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    /// Leading hidden layers that splice `{-1, 0, 1}`; the rest use `{0}`.
    pub spliced_layers: usize,
    pub n_classes: usize,
}

impl Topology {
    pub fn to_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.feature_dim;
        for i in 0..self.hidden_layers {
            let ctx = if i < self.spliced_layers {
                vec![-1, 0, 1]
            } else {
                vec![0]
            };
            specs.push(LayerSpec::new(
                prev * ctx.len(),
                self.hidden_dim,
                Activation::Relu,
                ctx,
            ));
            prev = self.hidden_dim;
        }
        specs.push(LayerSpec::new(prev, self.n_classes, Activation::Softmax, vec![0]));
        specs
    }
}

/// Builds a model with Glorot-uniform weights: `U(-a, a)`,
/// `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_model(specs: &[LayerSpec], model_id: impl Into<String>, seed: u64) -> Result<ModelParams> {
    let mut rng = seeds::rng_from(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let a = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
        let weights = (0..spec.input_dim * spec.output_dim)
            .map(|_| rng.gen_range(-a..a))
            .collect();
        layers.push(Layer {
            spec: spec.clone(),
            weights,
            bias: vec![0.0; spec.output_dim],
        });
    }
    let model = ModelParams {
        layers,
        model_id: model_id.into(),
        parent_id: None,
    };
    model.validate()?;
    Ok(model)
}
