//! ConvNet-S: a float stem, three binarized residual-style blocks and a
//! float classifier.
//!
//! ```text
//! x -> conv3x3 (float) -> BN -> h0
//! h_{i} = BN(binconv(sign(h_{i-1}))) [+ h_{i-1} when shapes match]
//! logits = linear(mean_hw(h3))
//! ```
//!
//! Binarized convolutions pad their `±1` input with `-1`, the same
//! convention as [`crate::bitkernel::binary_conv2d`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache, ConvCache};
use super::tensor::Tensor;
use super::NnError;
use crate::binarize::{half_half_binarize, optimal_binarize, WeightVector};

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// How a binarized layer turns each real filter into `±1` weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightBinarizer {
    /// Top-half magnitudes to `+1` (the default training scheme).
    #[serde(rename = "siman")]
    HalfHalf,
    /// Optimal angle-aligned magnitude code.
    #[serde(rename = "siman1")]
    Optimal,
    /// `sign(w)`.
    #[serde(rename = "sign_baseline")]
    Sign,
}

impl WeightBinarizer {
    pub fn name(self) -> &'static str {
        match self {
            Self::HalfHalf => "siman",
            Self::Optimal => "siman1",
            Self::Sign => "sign_baseline",
        }
    }
}

/// Binarizes every output filter of `weight` (`[out, ...]`).
///
/// Returns the `±1` tensor and one `beta = mean(|w|)` per filter.
pub fn binarize_layer_forward(weight: &Tensor, mode: WeightBinarizer) -> Result<(Tensor, Vec<f64>), NnError> {
    let filters = weight.dim(0);
    let per = weight.len() / filters;
    let mut signs = Vec::with_capacity(weight.len());
    let mut betas = Vec::with_capacity(filters);
    for f in weight.data().chunks(per) {
        betas.push(f.iter().map(|v| v.abs()).sum::<f64>() / per as f64);
        match mode {
            WeightBinarizer::HalfHalf => {
                signs.extend(half_half_binarize(&WeightVector::from_slice(f)?).to_signs());
            }
            WeightBinarizer::Optimal => {
                signs.extend(optimal_binarize(&WeightVector::from_slice(f)?)?.to_signs());
            }
            WeightBinarizer::Sign => signs.extend(f.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })),
        }
    }
    Ok((Tensor::new(weight.shape().to_vec(), signs)?, betas))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub stem_width: usize,
    /// `(out_channels, stride)` of each binarized block.
    pub blocks: Vec<(usize, usize)>,
}

impl ArchSpec {
    /// ConvNet-S: stem 16, blocks 16->32 (s2), 32->64 (s2), 64->64 (s1).
    pub fn convnet_s(in_channels: usize, height: usize, width: usize, classes: usize) -> Self {
        Self { in_channels, height, width, classes, stem_width: 16, blocks: vec![(32, 2), (64, 2), (64, 1)] }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.in_channels == 0 || self.height == 0 || self.width == 0 || self.stem_width == 0 {
            return Err(NnError::InvalidConfig("architecture dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(NnError::InvalidConfig("need at least two classes".into()));
        }
        if self.blocks.iter().any(|&(c, s)| c == 0 || s == 0) {
            return Err(NnError::InvalidConfig("block widths and strides must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    BatchNorm,
    Linear,
}

/// One parameterized layer.
///
/// Parameter order: conv `[weight]`; batch norm
/// `[gamma, beta, running_mean, running_var]`; linear `[weight, bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub binarize: bool,
    pub params: Vec<Tensor>,
    /// Per-filter scale of a binarized conv, refreshed on every forward.
    pub betas: Vec<f64>,
}

impl LayerRecord {
    /// Number of leading `params` that are trained by gradient descent.
    pub fn trainable(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } => 1,
            LayerKind::BatchNorm | LayerKind::Linear => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub arch: ArchSpec,
    pub binarizer: WeightBinarizer,
    pub layers: Vec<LayerRecord>,
    /// Free-form description of how the state was produced (config echo).
    pub meta: String,
}

/// Gradients for the trainable parameters, aligned with `NetworkState::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(Tensor::is_finite)
    }
}

fn bn_record(name: String, c: usize) -> LayerRecord {
    LayerRecord {
        name,
        kind: LayerKind::BatchNorm,
        binarize: false,
        params: vec![Tensor::filled(&[c], 1.0), Tensor::zeros(&[c]), Tensor::zeros(&[c]), Tensor::filled(&[c], 1.0)],
        betas: vec![],
    }
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..shape.iter().product()).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

struct BlockCache {
    input: Tensor,
    signs: Tensor,
    conv: ConvCache,
    bn: BnCache,
    skip: bool,
}

/// Everything the backward pass needs from a training forward pass.
pub struct ForwardCache {
    stem_conv: ConvCache,
    stem_bn: BnCache,
    blocks: Vec<BlockCache>,
    pooled: Tensor,
    last_shape: Vec<usize>,
}

/// Output of a binarized convolution before batch norm, with what backward
/// needs.
pub struct BinarizedConv {
    pub output: Tensor,
    pub signs: Tensor,
    pub betas: Vec<f64>,
    cache: ConvCache,
}

/// `beta_j * (b_j conv x)` with `±1` input `x`, `-1` padding and the
/// integer-valued convolution computed before scaling.
pub fn binarized_conv_forward(
    x_signs: &Tensor,
    weight: &Tensor,
    mode: WeightBinarizer,
    stride: usize,
    padding: usize,
) -> Result<BinarizedConv, NnError> {
    let (signs, betas) = binarize_layer_forward(weight, mode)?;
    let (mut out, cache) = layers::conv2d_forward(x_signs, &signs, stride, padding, -1.0)?;
    scale_channels(&mut out, &betas);
    Ok(BinarizedConv { output: out, signs, betas, cache })
}

fn scale_channels(t: &mut Tensor, scale: &[f64]) {
    let c = t.dim(1);
    let hw = t.len() / (t.dim(0) * c);
    for (i, chunk) in t.data_mut().chunks_mut(hw).enumerate() {
        let s = scale[i % c];
        chunk.iter_mut().for_each(|v| *v *= s);
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

impl NetworkState {
    /// Kaiming-normal convs, `N(0, 1/fan_in)` classifier, unit batch norm.
    pub fn init(arch: ArchSpec, binarizer: WeightBinarizer, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let c0 = arch.stem_width;
        layers.push(LayerRecord {
            name: "stem.conv".into(),
            kind: LayerKind::Conv { stride: 1, padding: 1 },
            binarize: false,
            params: vec![kaiming(&[c0, arch.in_channels, 3, 3], arch.in_channels * 9, &mut rng)],
            betas: vec![],
        });
        layers.push(bn_record("stem.bn".into(), c0));
        let mut c_in = c0;
        for (i, &(c_out, stride)) in arch.blocks.iter().enumerate() {
            layers.push(LayerRecord {
                name: format!("block{}.conv", i + 1),
                kind: LayerKind::Conv { stride, padding: 1 },
                binarize: true,
                params: vec![kaiming(&[c_out, c_in, 3, 3], c_in * 9, &mut rng)],
                betas: vec![],
            });
            layers.push(bn_record(format!("block{}.bn", i + 1), c_out));
            c_in = c_out;
        }
        let normal = Normal::new(0.0, (1.0 / c_in as f64).sqrt()).expect("positive std");
        let w = (0..arch.classes * c_in).map(|_| normal.sample(&mut rng)).collect();
        layers.push(LayerRecord {
            name: "head.linear".into(),
            kind: LayerKind::Linear,
            binarize: false,
            params: vec![Tensor::new(vec![arch.classes, c_in], w)?, Tensor::zeros(&[arch.classes])],
            betas: vec![],
        });
        let mut state = Self { arch, binarizer, layers, meta: String::new() };
        state.refresh_betas()?;
        Ok(state)
    }

    /// Recomputes `beta = mean(|w|)` for every binarized layer.
    pub fn refresh_betas(&mut self) -> Result<(), NnError> {
        for layer in self.layers.iter_mut().filter(|l| l.binarize) {
            let w = &layer.params[0];
            let per = w.len() / w.dim(0);
            layer.betas = w.data().chunks(per).map(|f| f.iter().map(|v| v.abs()).sum::<f64>() / per as f64).collect();
        }
        Ok(())
    }

    pub fn binarized_layers(&self) -> impl Iterator<Item = &LayerRecord> {
        self.layers.iter().filter(|l| l.binarize)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let a = &self.arch;
        match *x.shape() {
            [_, c, h, w] if c == a.in_channels && h == a.height && w == a.width => Ok(()),
            ref s => Err(NnError::ShapeMismatch(format!(
                "expected input [N, {}, {}, {}], got {s:?}",
                a.in_channels, a.height, a.width
            ))),
        }
    }

    fn conv_geometry(&self, idx: usize) -> (usize, usize) {
        match self.layers[idx].kind {
            LayerKind::Conv { stride, padding } => (stride, padding),
            _ => unreachable!("layer {idx} is not a convolution"),
        }
    }

    /// Training-mode forward. Updates batch-norm running statistics and the
    /// stored betas.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_input(x)?;
        let (stride, pad) = self.conv_geometry(0);
        let (h, stem_conv) = layers::conv2d_forward(x, &self.layers[0].params[0], stride, pad, 0.0)?;
        let (mut h, stem_bn) = self.bn_train(1, &h)?;
        let mut blocks = Vec::with_capacity(self.arch.blocks.len());
        for b in 0..self.arch.blocks.len() {
            let (ci, bi) = (2 + 2 * b, 3 + 2 * b);
            let signs = layers::sign_activation(&h);
            let (stride, pad) = self.conv_geometry(ci);
            let conv = binarized_conv_forward(&signs, &self.layers[ci].params[0], self.binarizer, stride, pad)?;
            self.layers[ci].betas = conv.betas.clone();
            let (mut out, bn) = self.bn_train(bi, &conv.output)?;
            let skip = out.shape() == h.shape();
            if skip {
                add_into(&mut out, &h);
            }
            blocks.push(BlockCache { input: h, signs: conv.signs, conv: conv.cache, bn, skip });
            h = out;
        }
        let last_shape = h.shape().to_vec();
        let pooled = layers::global_avg_pool(&h)?;
        let head = self.layers.last().expect("head layer");
        let logits = layers::linear_forward(&pooled, &head.params[0], head.params[1].data())?;
        Ok((logits, ForwardCache { stem_conv, stem_bn, blocks, pooled, last_shape }))
    }

    fn bn_train(&mut self, idx: usize, x: &Tensor) -> Result<(Tensor, BnCache), NnError> {
        let params = &mut self.layers[idx].params;
        let (gamma, rest) = params.split_at_mut(1);
        let (beta, stats) = rest.split_at_mut(1);
        let (rm, rv) = stats.split_at_mut(1);
        layers::batchnorm_forward_train(
            x,
            gamma[0].data(),
            beta[0].data(),
            rm[0].data_mut(),
            rv[0].data_mut(),
            BN_MOMENTUM,
        )
    }

    fn bn_eval(&self, idx: usize, x: &Tensor) -> Result<Tensor, NnError> {
        let p = &self.layers[idx].params;
        layers::batchnorm_forward_eval(x, p[0].data(), p[1].data(), p[2].data(), p[3].data())
    }

    /// Inference forward with running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let (stride, pad) = self.conv_geometry(0);
        let (h, _) = layers::conv2d_forward(x, &self.layers[0].params[0], stride, pad, 0.0)?;
        let mut h = self.bn_eval(1, &h)?;
        for b in 0..self.arch.blocks.len() {
            let (ci, bi) = (2 + 2 * b, 3 + 2 * b);
            let signs = layers::sign_activation(&h);
            let (stride, pad) = self.conv_geometry(ci);
            let conv = binarized_conv_forward(&signs, &self.layers[ci].params[0], self.binarizer, stride, pad)?;
            let mut out = self.bn_eval(bi, &conv.output)?;
            if out.shape() == h.shape() {
                add_into(&mut out, &h);
            }
            h = out;
        }
        let pooled = layers::global_avg_pool(&h)?;
        let head = self.layers.last().expect("head layer");
        layers::linear_forward(&pooled, &head.params[0], head.params[1].data())
    }

    /// Backpropagates `grad_logits` through the cached forward pass.
    ///
    /// Activation signs use the piecewise-polynomial surrogate; binarized
    /// weights use the straight-through estimator.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients, NnError> {
        let nl = self.layers.len();
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); nl];
        let head = &self.layers[nl - 1];
        let (g_pool, g_w, g_b) = layers::linear_backward(grad_logits, &cache.pooled, &head.params[0])?;
        grads[nl - 1] = vec![g_w, Tensor::new(vec![g_b.len()], g_b)?];
        let mut g = layers::global_avg_pool_backward(&g_pool, &cache.last_shape)?;
        for (b, bc) in cache.blocks.iter().enumerate().rev() {
            let (ci, bi) = (2 + 2 * b, 3 + 2 * b);
            let gamma = self.layers[bi].params[0].data();
            let (mut g_conv, g_gamma, g_beta) = layers::batchnorm_backward(&g, gamma, &bc.bn)?;
            grads[bi] = vec![Tensor::new(vec![g_gamma.len()], g_gamma)?, Tensor::new(vec![g_beta.len()], g_beta)?];
            scale_channels(&mut g_conv, &self.layers[ci].betas);
            let (g_signs, g_binary) = layers::conv2d_backward(&g_conv, &bc.signs, &bc.conv)?;
            grads[ci] = vec![layers::ste_weight_grad(&g_binary, self.layers[ci].params[0].shape())?];
            let mask = layers::activation_grad_mask(&bc.input);
            let mut g_in = g_signs;
            for (v, m) in g_in.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            if bc.skip {
                add_into(&mut g_in, &g);
            }
            g = g_in;
        }
        let gamma = self.layers[1].params[0].data();
        let (g_stem, g_gamma, g_beta) = layers::batchnorm_backward(&g, gamma, &cache.stem_bn)?;
        grads[1] = vec![Tensor::new(vec![g_gamma.len()], g_gamma)?, Tensor::new(vec![g_beta.len()], g_beta)?];
        let (_, g_w0) = layers::conv2d_backward(&g_stem, &self.layers[0].params[0], &cache.stem_conv)?;
        grads[0] = vec![g_w0];
        Ok(Gradients { layers: grads })
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params.iter().all(Tensor::is_finite))
    }
}
