//! Momentum SGD with a cosine schedule and per-group weight decay, and the
//! end-to-end training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{argmax, softmax_cross_entropy};
use super::model::{ArchSpec, Gradients, NetworkState, WeightBinarizer};
use super::stats::{layer_stats, LayerStats};
use super::tensor::Tensor;
use super::NnError;
use crate::data::{augment, Sample};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// `0.5 * lr0 * (1 + cos(pi * epoch / epochs))`, stepped per epoch.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 coefficient for layers that are not binarized.
    pub weight_decay_other: f64,
    /// L2 coefficient for binarized layers.
    pub weight_decay_binarized: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub binarizer: WeightBinarizer,
    /// Random crop + flip on image samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 20,
            batch_size: 64,
            weight_decay_other: 5e-4,
            weight_decay_binarized: 0.0,
            seed: 0,
            schedule: Schedule::Cosine,
            binarizer: WeightBinarizer::HalfHalf,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.weight_decay_other < 0.0 || self.weight_decay_binarized < 0.0 {
            return bad("weight decay must be nonnegative".into());
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Cosine => cosine_lr(self.learning_rate, epoch, self.epochs),
        }
    }
}

pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

/// Training variants: binarizer choice crossed with L2 on binarized layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Half-half codes, no decay on binarized layers.
    Siman,
    /// Optimal codes with decay.
    Siman1,
    /// Optimal codes without decay.
    Siman2,
    /// Half-half codes with decay.
    Siman3,
    /// `sign(w)` codes with decay.
    Sign,
}

impl TrainMode {
    pub fn binarizer(self) -> WeightBinarizer {
        match self {
            Self::Siman | Self::Siman3 => WeightBinarizer::HalfHalf,
            Self::Siman1 | Self::Siman2 => WeightBinarizer::Optimal,
            Self::Sign => WeightBinarizer::Sign,
        }
    }

    pub fn decays_binarized(self) -> bool {
        matches!(self, Self::Siman1 | Self::Siman3 | Self::Sign)
    }

    /// `base` with the binarizer and binarized-layer decay set for this mode.
    pub fn configure(self, mut base: TrainConfig, decay: f64) -> TrainConfig {
        base.binarizer = self.binarizer();
        base.weight_decay_binarized = if self.decays_binarized() { decay } else { 0.0 };
        base
    }
}

/// Momentum buffers, one per trainable tensor.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update: `g += decay * w; v = mu v + g; w -= lr(epoch) * v`.
    ///
    /// Decay applies to conv and linear weights only, with the coefficient
    /// chosen by the layer's binarize flag.
    pub fn step(&mut self, state: &mut NetworkState, grads: &Gradients, config: &TrainConfig, epoch: usize) -> Result<(), NnError> {
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        if grads.layers.len() != state.layers.len() {
            return Err(NnError::ShapeMismatch("gradient does not match the network".into()));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.layers.iter().map(|g| g.iter().map(|t| Tensor::zeros(t.shape())).collect()).collect();
        }
        let lr = config.lr_at(epoch);
        for ((layer, g), vel) in state.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            let decay = if layer.binarize { config.weight_decay_binarized } else { config.weight_decay_other };
            for (i, (gt, vt)) in g.iter().zip(vel.iter_mut()).enumerate() {
                let param = &mut layer.params[i];
                if param.shape() != gt.shape() {
                    return Err(NnError::ShapeMismatch(format!("gradient for {} has the wrong shape", layer.name)));
                }
                let d = if i == 0 && !matches!(layer.kind, super::LayerKind::BatchNorm) { decay } else { 0.0 };
                for ((w, &gv), v) in param.data_mut().iter_mut().zip(gt.data()).zip(vt.data_mut()) {
                    let gd = gv + d * *w;
                    *v = config.momentum * *v + gd;
                    *w -= lr * *v;
                }
            }
        }
        if !state.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        Ok(())
    }
}

/// Plain single-step update without momentum history, for callers that do
/// not keep an optimizer around.
pub fn sgd_step(state: &mut NetworkState, grads: &Gradients, config: &TrainConfig, epoch: usize) -> Result<(), NnError> {
    Sgd::new().step(state, grads, config, epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_p_plus: f64,
    pub mean_cos_siman: f64,
    pub mean_cos_sign: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: [&'static str; 8] =
        ["epoch", "lr", "train_loss", "train_acc", "test_acc", "mean_p_plus", "mean_cos_siman", "mean_cos_sign"];

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            format!("{:.8}", self.lr),
            format!("{:.8}", self.train_loss),
            format!("{:.6}", self.train_acc),
            format!("{:.6}", self.test_acc),
            format!("{:.6}", self.mean_p_plus),
            format!("{:.6}", self.mean_cos_siman),
            format!("{:.6}", self.mean_cos_sign),
        ]
    }
}

pub struct TrainOutcome {
    pub state: NetworkState,
    pub metrics: Vec<EpochMetrics>,
    pub layer_stats: Vec<LayerStats>,
}

fn batch_tensor(samples: &[&Sample]) -> Result<(Tensor, Vec<usize>), NnError> {
    let shape = samples[0].shape;
    let mut data = Vec::with_capacity(samples.len() * samples[0].pixels.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.shape != shape {
            return Err(NnError::ShapeMismatch("samples in a batch must share a shape".into()));
        }
        data.extend_from_slice(&s.pixels);
        labels.push(s.label);
    }
    let t = Tensor::new(vec![samples.len(), shape[0], shape[1], shape[2]], data)?;
    Ok((t, labels))
}

/// Eval-mode accuracy over `samples`.
pub fn evaluate(state: &NetworkState, samples: &[Sample]) -> Result<f64, NnError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, labels) = batch_tensor(&refs)?;
        let logits = state.forward_eval(&x)?;
        let k = logits.dim(1);
        correct += logits.data().chunks(k).zip(&labels).filter(|(row, &y)| argmax(row) == y).count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Architecture matching the sample geometry.
pub fn arch_for(samples: &[Sample], classes: usize) -> Result<ArchSpec, NnError> {
    let s = samples.first().ok_or(NnError::DatasetEmpty)?;
    let [c, h, w] = s.shape;
    Ok(ArchSpec::convnet_s(c, h, w, classes))
}

/// Mixes `seed` with a stream tag and index (SplitMix64 finalizer), so each
/// epoch gets an independent, reproducible random stream.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn summarize(stats: &[LayerStats]) -> (f64, f64, f64) {
    let n = stats.len().max(1) as f64;
    (
        stats.iter().map(|s| s.mean_p_plus).sum::<f64>() / n,
        stats.iter().map(|s| s.mean_cos_siman).sum::<f64>() / n,
        stats.iter().map(|s| s.mean_cos_sign).sum::<f64>() / n,
    )
}

/// Trains a fresh network on `train_set`; see [`train_state`].
pub fn train(
    arch: ArchSpec,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    let state = NetworkState::init(arch, config.binarizer, derive_seed(config.seed, 1, 0))?;
    train_state(state, train_set, test_set, config, on_epoch)
}

/// Runs `config.epochs` epochs of minibatch SGD on `state`.
///
/// Sample order and augmentation draws come from per-epoch ChaCha8 streams
/// derived from `config.seed`, so two runs with the same inputs produce
/// identical states and metrics.
pub fn train_state(
    mut state: NetworkState,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::DatasetEmpty);
    }
    let classes = state.arch.classes;
    if let Some(s) = train_set.iter().chain(test_set).find(|s| s.label >= classes) {
        return Err(NnError::InvalidConfig(format!("label {} out of range for {classes} classes", s.label)));
    }
    state.binarizer = config.binarizer;
    let mut sgd = Sgd::new();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, epoch as u64));
        let mut augment_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let augmented: Vec<Sample>;
            let refs: Vec<&Sample> = if config.augment {
                augmented = idx.iter().map(|&i| augment(&train_set[i], &mut augment_rng)).collect();
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &train_set[i]).collect()
            };
            let (x, labels) = batch_tensor(&refs)?;
            let (logits, cache) = state.forward_train(&x)?;
            if !logits.is_finite() {
                return Err(NnError::NonFiniteActivation);
            }
            let (loss, grad, ok) = softmax_cross_entropy(&logits, &labels)?;
            loss_sum += loss * labels.len() as f64;
            correct += ok;
            let grads = state.backward(&cache, &grad)?;
            sgd.step(&mut state, &grads, config, epoch)?;
        }
        state.refresh_betas()?;
        let stats = layer_stats(&state);
        let (p, cs, cg) = summarize(&stats);
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr: config.lr_at(epoch),
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc: evaluate(&state, test_set)?,
            mean_p_plus: p,
            mean_cos_siman: cs,
            mean_cos_sign: cg,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    let layer_stats = layer_stats(&state);
    Ok(TrainOutcome { state, metrics, layer_stats })
}
