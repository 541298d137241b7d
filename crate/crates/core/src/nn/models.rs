//! The five architectures used by the pipeline. All builders take a spec
//! plus a seed and initialize deterministically.

use super::{
    softmax_channels, Conv2d, DiscriminatorSpec, DomainClassifierSpec, GeneratorSpec,
    Initializer, Linear, NnError, Norm, SegmenterSpec, SiameseBackbone, SiameseEncoderSpec,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

type Params<T> = Vec<(String, Tensor<T>)>;

struct ResBlock<T: Scalar> {
    conv1: Conv2d<T>,
    norm1: Norm<T>,
    conv2: Conv2d<T>,
    norm2: Norm<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(init: &mut Initializer, ch: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(init, ch, ch, 3, 1, 1),
            norm1: Norm::instance(init, ch),
            conv2: Conv2d::new(init, ch, ch, 3, 1, 1),
            norm2: Norm::instance(init, ch),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.norm1.forward(&self.conv1.forward(x)).relu();
        let h = self.norm2.forward(&self.conv2.forward(&h));
        x.add(&h)
    }

    fn params(&self, prefix: &str, out: &mut Params<T>) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.norm1.params(&format!("{prefix}.norm1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        self.norm2.params(&format!("{prefix}.norm2"), out);
    }
}

/// Image-to-image generator. The head predicts a residual that is added to
/// the input, so a zeroed head is exactly the identity map.
pub struct GeneratorNet<T: Scalar> {
    pub spec: GeneratorSpec,
    stem: Conv2d<T>,
    stem_norm: Norm<T>,
    down1: Conv2d<T>,
    down1_norm: Norm<T>,
    down2: Conv2d<T>,
    down2_norm: Norm<T>,
    blocks: Vec<ResBlock<T>>,
    up1: Conv2d<T>,
    up1_norm: Norm<T>,
    up2: Conv2d<T>,
    up2_norm: Norm<T>,
    head: Conv2d<T>,
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn build(spec: &GeneratorSpec, seed: u64) -> Result<Self, NnError> {
        if spec.width == 0 || spec.channels == 0 {
            return Err(NnError::InvalidSpec("generator width/channels must be positive".into()));
        }
        let w = spec.width;
        let mut init = Initializer::new(seed);
        let net = GeneratorNet {
            spec: spec.clone(),
            stem: Conv2d::new(&mut init, spec.channels, w, 7, 1, 3),
            stem_norm: Norm::instance(&mut init, w),
            down1: Conv2d::new(&mut init, w, 2 * w, 3, 2, 1),
            down1_norm: Norm::instance(&mut init, 2 * w),
            down2: Conv2d::new(&mut init, 2 * w, 4 * w, 3, 2, 1),
            down2_norm: Norm::instance(&mut init, 4 * w),
            blocks: (0..spec.residual_blocks)
                .map(|_| ResBlock::new(&mut init, 4 * w))
                .collect(),
            up1: Conv2d::new(&mut init, 4 * w, 2 * w, 3, 1, 1),
            up1_norm: Norm::instance(&mut init, 2 * w),
            up2: Conv2d::new(&mut init, 2 * w, w, 3, 1, 1),
            up2_norm: Norm::instance(&mut init, w),
            head: Conv2d::new(&mut init, w, spec.channels, 7, 1, 3),
        };
        if spec.identity_init {
            net.head.weight.update_value(|v| v.fill(T::zero()));
            net.head.bias.update_value(|v| v.fill(T::zero()));
        } else {
            // Start close to the identity map; the residual head grows as
            // the adversarial signal demands.
            let damp = T::c(0.1);
            net.head.weight.update_value(|v| v.mapv_inplace(|x| x * damp));
        }
        Ok(net)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let shape = x.shape();
        assert!(
            shape.len() == 4 && shape[2] % 4 == 0 && shape[3] % 4 == 0,
            "generator input must be [N,C,H,W] with H, W divisible by 4"
        );
        let h = self.stem_norm.forward(&self.stem.forward(x)).relu();
        let h = self.down1_norm.forward(&self.down1.forward(&h)).relu();
        let mut h = self.down2_norm.forward(&self.down2.forward(&h)).relu();
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let h = self
            .up1_norm
            .forward(&self.up1.forward(&h.upsample_nearest2()))
            .relu();
        let h = self
            .up2_norm
            .forward(&self.up2.forward(&h.upsample_nearest2()))
            .relu();
        let delta = self.head.forward(&h);
        x.add(&delta)
    }

    pub fn params(&self) -> Params<T> {
        let mut out = Vec::new();
        self.stem.params("stem", &mut out);
        self.stem_norm.params("stem_norm", &mut out);
        self.down1.params("down1", &mut out);
        self.down1_norm.params("down1_norm", &mut out);
        self.down2.params("down2", &mut out);
        self.down2_norm.params("down2_norm", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("res{i}"), &mut out);
        }
        self.up1.params("up1", &mut out);
        self.up1_norm.params("up1_norm", &mut out);
        self.up2.params("up2", &mut out);
        self.up2_norm.params("up2_norm", &mut out);
        self.head.params("head", &mut out);
        out
    }
}

/// Patch-free discriminator: 4 strided conv blocks then a linear layer to
/// a single logit per image.
pub struct DiscriminatorNet<T: Scalar> {
    pub spec: DiscriminatorSpec,
    convs: Vec<Conv2d<T>>,
    norms: Vec<Option<Norm<T>>>,
    fc: Linear<T>,
}

impl<T: Scalar> DiscriminatorNet<T> {
    pub fn build(spec: &DiscriminatorSpec, seed: u64) -> Result<Self, NnError> {
        if spec.width == 0 || spec.channels == 0 {
            return Err(NnError::InvalidSpec("discriminator width/channels must be positive".into()));
        }
        let (h, w) = spec.input_hw;
        let total_stride: usize = spec.strides.iter().product();
        if h % total_stride != 0 || w % total_stride != 0 {
            return Err(NnError::InvalidSpec(format!(
                "input {h}x{w} not divisible by total stride {total_stride}"
            )));
        }
        let mut init = Initializer::new(seed);
        let chans = [
            spec.width,
            2 * spec.width,
            4 * spec.width,
            8 * spec.width,
        ];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_ch = spec.channels;
        for (i, (&ch, &s)) in chans.iter().zip(spec.strides.iter()).enumerate() {
            convs.push(Conv2d::new(&mut init, in_ch, ch, 4, s, 1));
            // First block unnormalized, per CycleGAN convention.
            norms.push(if i == 0 {
                None
            } else {
                Some(Norm::instance(&mut init, ch))
            });
            in_ch = ch;
        }
        // Conv arithmetic with k=4, p=1: out = floor((in - 2) / s) + 1.
        let (mut fh, mut fw) = (h, w);
        for &s in &spec.strides {
            fh = (fh - 2) / s + 1;
            fw = (fw - 2) / s + 1;
        }
        let fc = Linear::new(&mut init, chans[3] * fh * fw, 1);
        Ok(DiscriminatorNet {
            spec: spec.clone(),
            convs,
            norms,
            fc,
        })
    }

    /// Returns one logit per image, shape `[N, 1]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let slope = T::c(self.spec.leaky_slope);
        let mut h = x.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(&h);
            if let Some(n) = norm {
                h = n.forward(&h);
            }
            h = h.leaky_relu(slope);
        }
        self.fc.forward(&h.flatten_batch())
    }

    pub fn params(&self) -> Params<T> {
        let mut out = Vec::new();
        for (i, (c, n)) in self.convs.iter().zip(&self.norms).enumerate() {
            c.params(&format!("block{i}.conv"), &mut out);
            if let Some(n) = n {
                n.params(&format!("block{i}.norm"), &mut out);
            }
        }
        self.fc.params("fc", &mut out);
        out
    }
}

/// Weight-tied embedding trunk for the Siamese filter. Both pair members
/// go through this single instance, so tying holds by construction.
pub struct SiameseEncoderNet<T: Scalar> {
    pub spec: SiameseEncoderSpec,
    convs: Vec<Conv2d<T>>,
    fc: Linear<T>,
}

impl<T: Scalar> SiameseEncoderNet<T> {
    pub fn build(spec: &SiameseEncoderSpec, seed: u64) -> Result<Self, NnError> {
        if spec.width == 0 || spec.latent_dim == 0 {
            return Err(NnError::InvalidSpec("siamese width/latent_dim must be positive".into()));
        }
        if spec.backbone == SiameseBackbone::InceptionV4 {
            return Err(NnError::InvalidSpec(
                "InceptionV4 backbone is a full-scale config option and is not implemented".into(),
            ));
        }
        let w = spec.width;
        let mut init = Initializer::new(seed);
        let chans = [w, 2 * w, 4 * w, 4 * w];
        let mut convs = Vec::new();
        let mut in_ch = spec.channels;
        for &ch in &chans {
            convs.push(Conv2d::new(&mut init, in_ch, ch, 3, 2, 1));
            in_ch = ch;
        }
        let fc = Linear::new(&mut init, 4 * w, spec.latent_dim);
        Ok(SiameseEncoderNet {
            spec: spec.clone(),
            convs,
            fc,
        })
    }

    /// Embed a batch `[N, C, H, W]` into `[N, latent_dim]`.
    pub fn embed(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h).relu();
        }
        let pooled = h.mean_axes(&[2, 3]);
        let shape = pooled.shape();
        self.fc.forward(&pooled.reshape(&[shape[0], shape[1]]))
    }

    pub fn params(&self) -> Params<T> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            c.params(&format!("conv{i}"), &mut out);
        }
        self.fc.params("fc", &mut out);
        out
    }
}

struct DownBlock<T: Scalar> {
    conv: Conv2d<T>,
    norm: Norm<T>,
}

struct UpBlock<T: Scalar> {
    conv: Conv2d<T>,
    norm: Norm<T>,
}

/// U-net segmenter. Five pooling down blocks take the input to 1/2^5 of
/// its resolution (the bottleneck fed to the domain classifier); four up
/// blocks plus the upsampling head mirror them with skip concatenation.
pub struct SegmenterNet<T: Scalar> {
    pub spec: SegmenterSpec,
    downs: Vec<DownBlock<T>>,
    ups: Vec<UpBlock<T>>,
    head: Conv2d<T>,
}

impl<T: Scalar> SegmenterNet<T> {
    pub fn build(spec: &SegmenterSpec, seed: u64) -> Result<Self, NnError> {
        if spec.width == 0 || spec.classes == 0 {
            return Err(NnError::InvalidSpec("segmenter width/classes must be positive".into()));
        }
        let mut init = Initializer::new(seed);
        let chans: Vec<usize> = (0..5).map(|i| spec.width << i).collect();
        let mut downs = Vec::new();
        let mut in_ch = spec.channels;
        for &ch in &chans {
            downs.push(DownBlock {
                conv: Conv2d::new(&mut init, in_ch, ch, 3, 1, 1),
                norm: Norm::batch(&mut init, ch),
            });
            in_ch = ch;
        }
        // Up block i consumes the upsampled decoder state concatenated
        // with skip 5-i (resolutions H/16 .. H/2).
        let mut ups = Vec::new();
        let mut dec_ch = chans[4];
        for i in (1..5).rev() {
            let skip_ch = chans[i];
            let out_ch = chans[i - 1].max(spec.width);
            ups.push(UpBlock {
                conv: Conv2d::new(&mut init, dec_ch + skip_ch, out_ch, 3, 1, 1),
                norm: Norm::batch(&mut init, out_ch),
            });
            dec_ch = out_ch;
        }
        let head = Conv2d::new(&mut init, dec_ch + chans[0], spec.classes, 3, 1, 1);
        Ok(SegmenterNet {
            spec: spec.clone(),
            downs,
            ups,
            head,
        })
    }

    /// Returns `(logits [N,K,H,W], bottleneck [N,C,H/32,W/32])`. The
    /// bottleneck tensor is the same graph node consumed by the decoder,
    /// so domain-classifier gradients flow into the encoder.
    pub fn forward_full(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let shape = x.shape();
        assert!(
            shape.len() == 4 && shape[2] % 32 == 0 && shape[3] % 32 == 0,
            "segmenter input must be [N,C,H,W] with H, W divisible by 32, got {shape:?}"
        );
        let mut skips = Vec::new();
        let mut h = x.clone();
        for d in &self.downs {
            let a = d.norm.forward(&d.conv.forward(&h)).relu();
            skips.push(a.clone());
            h = a.avg_pool2();
        }
        let bottleneck = h.clone();
        for (i, u) in self.ups.iter().enumerate() {
            let skip = &skips[4 - i];
            let up = h.upsample_nearest2();
            let cat = Tensor::concat(&[up, skip.clone()], 1);
            h = u.norm.forward(&u.conv.forward(&cat)).relu();
        }
        let up = h.upsample_nearest2();
        let cat = Tensor::concat(&[up, skips[0].clone()], 1);
        let logits = self.head.forward(&cat);
        (logits, bottleneck)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_full(x).0
    }

    /// Encoder output fed to both the decoder and (through gradient
    /// reversal) the domain classifier.
    pub fn encoder_bottleneck(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_full(x).1
    }

    pub fn probabilities(&self, x: &Tensor<T>) -> Tensor<T> {
        softmax_channels(&self.forward(x))
    }

    /// Flattened bottleneck dimension for a given input size.
    pub fn bottleneck_dim(&self, h: usize, w: usize) -> usize {
        (self.spec.width << 4) * (h / 32) * (w / 32)
    }

    pub fn params(&self) -> Params<T> {
        let mut out = Vec::new();
        for (i, d) in self.downs.iter().enumerate() {
            d.conv.params(&format!("down{i}.conv"), &mut out);
            d.norm.params(&format!("down{i}.norm"), &mut out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.conv.params(&format!("up{i}.conv"), &mut out);
            u.norm.params(&format!("up{i}.norm"), &mut out);
        }
        self.head.params("head", &mut out);
        out
    }
}

/// Five dense layers; ReLU hidden activations, sigmoid output probability.
pub struct DomainClassifierNet<T: Scalar> {
    pub spec: DomainClassifierSpec,
    layers: Vec<Linear<T>>,
}

impl<T: Scalar> DomainClassifierNet<T> {
    pub fn build(spec: &DomainClassifierSpec, seed: u64) -> Result<Self, NnError> {
        if spec.input_dim == 0 || spec.hidden.iter().any(|&h| h == 0) {
            return Err(NnError::InvalidSpec("domain classifier dims must be positive".into()));
        }
        let mut init = Initializer::new(seed);
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|wnd| Linear::new(&mut init, wnd[0], wnd[1]))
            .collect();
        Ok(DomainClassifierNet {
            spec: spec.clone(),
            layers,
        })
    }

    /// `latent` is `[N, input_dim]`; returns probabilities in (0,1), `[N, 1]`.
    pub fn forward(&self, latent: &Tensor<T>) -> Tensor<T> {
        let mut h = latent.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h);
            if i < last {
                h = h.relu();
            }
        }
        h.sigmoid()
    }

    pub fn params(&self) -> Params<T> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("fc{i}"), &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::constant(ArrayD::from_shape_simple_fn(vec![n, c, h, w], || {
            rng.gen_range(0.0..1.0)
        }))
    }

    #[test]
    fn generator_preserves_shape() {
        let g = GeneratorNet::<f32>::build(&GeneratorSpec::default(), 1).unwrap();
        let x = rand_image(2, 1, 64, 64, 0);
        assert_eq!(g.forward(&x).shape(), vec![2, 1, 64, 64]);
    }

    #[test]
    fn identity_init_generator_is_identity() {
        let spec = GeneratorSpec {
            identity_init: true,
            ..GeneratorSpec::default()
        };
        let g = GeneratorNet::<f32>::build(&spec, 3).unwrap();
        let x = rand_image(1, 1, 32, 32, 1);
        let y = g.forward(&x);
        let diff = (&y.to_array() - &x.to_array()).mapv(f32::abs).sum();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn discriminator_outputs_one_logit_per_image() {
        let d = DiscriminatorNet::<f32>::build(&DiscriminatorSpec::default(), 2).unwrap();
        let x = rand_image(3, 1, 64, 64, 2);
        assert_eq!(d.forward(&x).shape(), vec![3, 1]);
    }

    #[test]
    fn segmenter_shapes_and_bottleneck() {
        let s = SegmenterNet::<f32>::build(&SegmenterSpec::default(), 4).unwrap();
        let x = rand_image(2, 1, 64, 64, 3);
        let (logits, bottleneck) = s.forward_full(&x);
        assert_eq!(logits.shape(), vec![2, 4, 64, 64]);
        assert_eq!(bottleneck.shape(), vec![2, 128, 2, 2]);
        assert_eq!(s.bottleneck_dim(64, 64), 512);
    }

    #[test]
    fn segmenter_softmax_normalized() {
        let s = SegmenterNet::<f32>::build(&SegmenterSpec::default(), 4).unwrap();
        let x = rand_image(1, 1, 32, 32, 9);
        let p = s.probabilities(&x).to_array();
        let sums = p.sum_axis(ndarray::Axis(1));
        for &v in sums.iter() {
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn siamese_embeds_to_latent_dim_and_ties_weights() {
        let e = SiameseEncoderNet::<f32>::build(&SiameseEncoderSpec::default(), 5).unwrap();
        let a = rand_image(4, 1, 64, 64, 5);
        assert_eq!(e.embed(&a).shape(), vec![4, 2]);
        // Same input through "both branches" is the same computation.
        let z1 = e.embed(&a).to_array();
        let z2 = e.embed(&a).to_array();
        assert_eq!(z1, z2);
    }

    #[test]
    fn domain_classifier_outputs_probability() {
        let spec = DomainClassifierSpec {
            input_dim: 512,
            ..DomainClassifierSpec::default()
        };
        let c = DomainClassifierNet::<f32>::build(&spec, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Tensor::constant(ArrayD::from_shape_simple_fn(vec![3, 512], || {
            rng.gen_range(-5.0_f32..5.0)
        }));
        let p = c.forward(&z).to_array();
        assert_eq!(p.shape(), &[3, 1]);
        for &v in p.iter() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = GeneratorNet::<f32>::build(&GeneratorSpec::default(), 77).unwrap();
        let b = GeneratorNet::<f32>::build(&GeneratorSpec::default(), 77).unwrap();
        for ((na, pa), (nb, pb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.to_array(), pb.to_array());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GeneratorNet::<f32>::build(
            &GeneratorSpec {
                width: 0,
                ..GeneratorSpec::default()
            },
            0
        )
        .is_err());
        assert!(SiameseEncoderNet::<f32>::build(
            &SiameseEncoderSpec {
                backbone: SiameseBackbone::InceptionV4,
                ..SiameseEncoderSpec::default()
            },
            0
        )
        .is_err());
    }
}
