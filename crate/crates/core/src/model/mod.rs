//! Fixed-architecture classifiers with analytic input gradients.

mod layers;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use layers::{Layer, LayerKind};
pub use train::{train, train_with_history, TrainConfig};

use crate::data::Dataset;
use crate::tensor::softmax_cross_entropy;
use crate::{Error, Result, Shape, Tensor};

/// Group membership used by the ensemble attacks: easy-to-attack models are
/// attacked targeted, robust ones non-targeted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RobustnessTag {
    Easy,
    Robust,
}

impl RobustnessTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RobustnessTag::Easy => "easy",
            RobustnessTag::Robust => "robust",
        }
    }
}

impl fmt::Display for RobustnessTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for RobustnessTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(RobustnessTag::Easy),
            "robust" => Ok(RobustnessTag::Robust),
            other => Err(Error::Config(format!("unknown robustness tag `{other}`"))),
        }
    }
}

/// The two supported architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// flatten -> dense -> relu -> dense
    Mlp { hidden: usize },
    /// conv3x3 -> relu -> avgpool2x2 -> flatten -> dense
    Cnn { channels: usize },
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp { .. } => "mlp",
            Architecture::Cnn { .. } => "cnn",
        }
    }

    /// Builds a freshly initialised classifier with Glorot-uniform weights
    /// and zero biases.
    pub fn build(
        self,
        id: impl Into<String>,
        input_shape: &Shape,
        num_classes: usize,
        tag: RobustnessTag,
        seed: u64,
    ) -> Result<Classifier> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = match self {
            Architecture::Mlp { hidden } => {
                let inputs = input_shape.numel();
                alloc::vec![
                    Layer::Flatten,
                    dense(&mut rng, inputs, hidden)?,
                    Layer::Relu,
                    dense(&mut rng, hidden, num_classes)?,
                ]
            }
            Architecture::Cnn { channels } => {
                let &[c, h, w] = input_shape.dims() else {
                    return Err(Error::Config(format!(
                        "cnn needs a [C, H, W] input, got {input_shape}"
                    )));
                };
                let fan = channels * (h / 2).max(1) * (w / 2).max(1);
                alloc::vec![
                    Layer::Conv3x3 {
                        weight: uniform(&mut rng, &[channels, c, 3, 3], 9 * c, 9 * channels)?,
                        bias: Tensor::zeros(&Shape::new([channels])?),
                    },
                    Layer::Relu,
                    Layer::AvgPool2x2,
                    Layer::Flatten,
                    dense(&mut rng, fan, num_classes)?,
                ]
            }
        };
        Classifier::new(id, input_shape.clone(), layers, tag)
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(dims.to_vec(), data)
}

fn dense(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Result<Layer> {
    Ok(Layer::Dense {
        weight: uniform(rng, &[outputs, inputs], inputs, outputs)?,
        bias: Tensor::zeros(&Shape::new([outputs])?),
    })
}

/// A classifier mapping one image to `num_classes` logits.
///
/// Every call to [`Classifier::input_gradient`] bumps a per-model counter, so
/// callers can prove that a model was never queried for gradients.
#[derive(Debug)]
pub struct Classifier {
    id: String,
    input_shape: Shape,
    layers: Vec<Layer>,
    num_classes: usize,
    tag: RobustnessTag,
    gradient_queries: AtomicUsize,
}

impl Clone for Classifier {
    fn clone(&self) -> Self {
        Classifier {
            id: self.id.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            num_classes: self.num_classes,
            tag: self.tag,
            gradient_queries: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Classifier {
    /// Compares identity and parameters, not query counters.
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.input_shape == other.input_shape
            && self.tag == other.tag
            && self.layers == other.layers
    }
}

impl Classifier {
    /// Validates that `layers` map `input_shape` to a vector of logits.
    pub fn new(
        id: impl Into<String>,
        input_shape: Shape,
        layers: Vec<Layer>,
        tag: RobustnessTag,
    ) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (index, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|detail| Error::Layer {
                layer: index,
                kind: layer.kind().name(),
                detail,
            })?;
        }
        if shape.rank() != 1 {
            return Err(Error::Layer {
                layer: layers.len().saturating_sub(1),
                kind: layers.last().map_or("input", |l| l.kind().name()),
                detail: format!("network must end in a logit vector, got {shape}"),
            });
        }
        Ok(Classifier {
            id: id.into(),
            input_shape,
            layers,
            num_classes: shape.dims()[0],
            tag,
            gradient_queries: AtomicUsize::new(0),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tag(&self) -> RobustnessTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: RobustnessTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        image.expect_shape(&self.input_shape)?;
        Ok(self
            .layers
            .iter()
            .fold(image.clone(), |x, layer| layer.forward(&x)))
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        Ok(self.forward(image)?.argmax())
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for (image, label) in data.iter() {
            if self.predict(image)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn loss(&self, image: &Tensor, label: usize) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.forward(image)?, label)?.0)
    }

    /// Gradient of the softmax cross-entropy at `(image, label)` with respect
    /// to the image. Counted in [`Classifier::gradient_queries`].
    pub fn input_gradient(&self, image: &Tensor, label: usize) -> Result<Tensor> {
        self.gradient_queries.fetch_add(1, Ordering::Relaxed);
        Ok(self.backprop(image, label, None)?.1)
    }

    /// Number of `input_gradient` calls since construction or the last reset.
    pub fn gradient_queries(&self) -> usize {
        self.gradient_queries.load(Ordering::Relaxed)
    }

    pub fn reset_gradient_queries(&self) {
        self.gradient_queries.store(0, Ordering::Relaxed);
    }

    /// Loss and input gradient, accumulating parameter gradients into
    /// `param_grads` (one slot per layer) when given. Not counted.
    pub(crate) fn backprop(
        &self,
        image: &Tensor,
        label: usize,
        param_grads: Option<&mut [Option<(Tensor, Tensor)>]>,
    ) -> Result<(f64, Tensor)> {
        image.expect_shape(&self.input_shape)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(image.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        let (loss, mut grad) = softmax_cross_entropy(acts.last().expect("nonempty"), label)?;
        match param_grads {
            Some(slots) => {
                for (i, layer) in self.layers.iter().enumerate().rev() {
                    grad = layer.backward(&acts[i], &grad, slots[i].as_mut());
                }
            }
            None => {
                for (i, layer) in self.layers.iter().enumerate().rev() {
                    grad = layer.backward(&acts[i], &grad, None);
                }
            }
        }
        Ok((loss, grad))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}
