//! Network building blocks: layers, parameter initialization, the five
//! model architectures of the pipeline, Adam, and checkpoint I/O.

mod adam;
mod checkpoint;
mod models;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use models::{
    DiscriminatorNet, DomainClassifierNet, GeneratorNet, SegmenterNet, SiameseEncoderNet,
};

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("checkpoint spec mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint I/O: {0}")]
    CheckpointIo(String),
}

/// Generator: stem conv, 2 stride-2 downs (factor 4), residual blocks,
/// 2 nearest-neighbour ups, residual output head.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorSpec {
    pub width: usize,
    pub residual_blocks: usize,
    pub channels: usize,
    /// Zero the output head so the generator starts as the identity map.
    pub identity_init: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            width: 8,
            residual_blocks: 2,
            channels: 1,
            identity_init: false,
        }
    }
}

/// Discriminator: 4 conv blocks with configurable strides (2 at desk
/// scale, 4 at full 400x640 scale), leaky ReLU slope 0.2, linear head to
/// one logit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscriminatorSpec {
    pub width: usize,
    pub channels: usize,
    pub strides: [usize; 4],
    pub leaky_slope: f64,
    /// Input spatial dims, needed to size the linear head.
    pub input_hw: (usize, usize),
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            width: 8,
            channels: 1,
            strides: [2, 2, 2, 2],
            leaky_slope: 0.2,
            input_hw: (64, 64),
        }
    }
}

/// Backbone choice for the Siamese encoder. Only the small convolutional
/// trunk is implemented; `InceptionV4` records the full-scale option.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum SiameseBackbone {
    SmallConv,
    /// Full-scale backbone; accepted in configs but not implemented.
    InceptionV4,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SiameseEncoderSpec {
    pub width: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub backbone: SiameseBackbone,
}

impl Default for SiameseEncoderSpec {
    fn default() -> Self {
        SiameseEncoderSpec {
            width: 8,
            channels: 1,
            latent_dim: 2,
            backbone: SiameseBackbone::SmallConv,
        }
    }
}

/// U-net segmenter: 5 pooling down blocks (bottleneck at input/2^5),
/// 4 up blocks plus an upsampling head, skip connections throughout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmenterSpec {
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        SegmenterSpec {
            width: 8,
            channels: 1,
            classes: 4,
        }
    }
}

/// Domain classifier: 5 dense layers, ReLU hidden, sigmoid output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainClassifierSpec {
    pub input_dim: usize,
    pub hidden: [usize; 4],
}

impl Default for DomainClassifierSpec {
    fn default() -> Self {
        DomainClassifierSpec {
            input_dim: 512,
            hidden: [64, 64, 32, 16],
        }
    }
}

/// Deterministic parameter initializer (He-style normal scaling).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self) -> f64 {
        // Box-Muller; uniform draws come from the seeded stream only.
        let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn conv_weight<T: Scalar>(&mut self, o: usize, c: usize, kh: usize, kw: usize) -> Tensor<T> {
        let std = (2.0 / (c * kh * kw) as f64).sqrt();
        let data: Vec<T> = (0..o * c * kh * kw)
            .map(|_| T::c(self.normal() * std))
            .collect();
        Tensor::param(ArrayD::from_shape_vec(IxDyn(&[o, c, kh, kw]), data).unwrap())
    }

    pub fn linear_weight<T: Scalar>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        let std = (2.0 / rows as f64).sqrt();
        let data: Vec<T> = (0..rows * cols).map(|_| T::c(self.normal() * std)).collect();
        Tensor::param(ArrayD::from_shape_vec(IxDyn(&[rows, cols]), data).unwrap())
    }

    pub fn zeros<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::param(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::param(ArrayD::from_elem(IxDyn(shape), T::one()))
    }
}

/// Convolution layer with owned parameters.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        init: &mut Initializer,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: init.conv_weight(out_ch, in_ch, k, k),
            bias: init.zeros(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut Initializer, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: init.linear_weight(in_dim, out_dim),
            bias: init.zeros(&[1, out_dim]),
        }
    }

    /// `x` is `[N, in_dim]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.matmul(&self.weight);
        let shape = y.shape();
        y.add(&self.bias.broadcast_as(&shape))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Affine normalization over the given axes, built from primitive ops so
/// the backward pass comes from the graph.
pub struct Norm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    axes: Vec<usize>,
    eps: T,
}

impl<T: Scalar> Norm<T> {
    /// Instance norm: statistics per sample and channel.
    pub fn instance(init: &mut Initializer, channels: usize) -> Self {
        Norm {
            gamma: init.ones(&[1, channels, 1, 1]),
            beta: init.zeros(&[1, channels, 1, 1]),
            axes: vec![2, 3],
            eps: T::c(1e-5),
        }
    }

    /// Batch norm with batch statistics (no running averages).
    pub fn batch(init: &mut Initializer, channels: usize) -> Self {
        Norm {
            gamma: init.ones(&[1, channels, 1, 1]),
            beta: init.zeros(&[1, channels, 1, 1]),
            axes: vec![0, 2, 3],
            eps: T::c(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let shape = x.shape();
        let mean = x.mean_axes(&self.axes);
        let centered = x.sub(&mean.broadcast_as(&shape));
        let var = centered.square().mean_axes(&self.axes);
        let denom = var.add_scalar(self.eps).sqrt().broadcast_as(&shape);
        let normed = centered.div(&denom);
        normed
            .mul(&self.gamma.broadcast_as(&shape))
            .add(&self.beta.broadcast_as(&shape))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Gradient reversal layer: identity forward, `-scale * g` backward.
pub fn gradient_reversal<T: Scalar>(x: &Tensor<T>, scale: T) -> Tensor<T> {
    x.gradient_reversal(scale)
}

/// Channel-axis softmax, shifted by the detached per-pixel max.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let shape = logits.shape();
    let max = {
        let v = logits.value();
        let mut m = v.to_owned();
        // max over channel axis 1, keepdims
        let reduced = m.map_axis(ndarray::Axis(1), |lane| {
            lane.iter().copied().fold(T::neg_infinity(), T::max)
        });
        m = reduced.insert_axis(ndarray::Axis(1));
        m
    };
    let shifted = logits.sub(&Tensor::constant(max).broadcast_as(&shape));
    let e = shifted.exp();
    let denom = e.sum_axes(&[1]).broadcast_as(&shape);
    e.div(&denom)
}
