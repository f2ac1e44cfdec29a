//! Built-in segmenter: a per-pixel logistic model over raw intensities and
//! two box means per channel, trained with minibatch Adam on the soft-Dice
//! loss of its sigmoid output.
//!
//! Training is bit-reproducible: patches are shuffled with a counter-based
//! stream keyed by epoch, and per-patch gradient partials computed in
//! parallel are reduced in patch order.

mod features;
mod optim;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, threshold};
use crate::patchgrid::{reconstruct, PatchGrid};
use crate::rng::CounterRng;
use crate::types::{BinaryMask, MultiChannelImage, ProbabilityMask, Raster};

pub use features::{feature_dim, featurize, Features};
pub use optim::{adam_update, AdamParams, AdamState};

pub const MODEL_MAGIC: [u8; 4] = *b"SGM1";
pub const MODEL_VERSION: &str = "pixel-linear/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelModel {
    pub weights: Vec<f64>,
    pub channels: usize,
    pub version: String,
}

impl PixelModel {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; feature_dim(channels)],
            channels,
            version: MODEL_VERSION.to_string(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::TruncatedPayload {
                expected: 12,
                actual: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: MODEL_MAGIC,
                found,
            });
        }
        let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if f != feature_dim(c) {
            return Err(Error::TensorLayout(format!(
                "model has {f} weights for {c} channels, expected {}",
                feature_dim(c)
            )));
        }
        let payload = &bytes[12..];
        if payload.len() != 8 * f {
            return Err(Error::TruncatedPayload {
                expected: 8 * f,
                actual: payload.len(),
            });
        }
        let weights: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::TensorLayout("model contains non-finite weights".into()));
        }
        Ok(Self {
            weights,
            channels: c,
            version: MODEL_VERSION.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn dot(w: &[f64], f: &[f32]) -> f64 {
    w.iter().zip(f).map(|(a, b)| a * *b as f64).sum()
}

/// Per-pixel sigmoid of the linear score.
pub fn predict(model: &PixelModel, image: &MultiChannelImage) -> Result<ProbabilityMask> {
    if image.channels() != model.channels {
        return Err(Error::ChannelMismatch {
            expected: model.channels,
            actual: image.channels(),
        });
    }
    let f = featurize(image);
    let values = (0..f.len())
        .map(|i| sigmoid(dot(&model.weights, f.pixel(i))) as f32)
        .collect();
    ProbabilityMask::new(image.width(), image.height(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eps_dice: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub threshold: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 20,
            eps_dice: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// One training patch and its target.
#[derive(Debug, Clone)]
pub struct TrainPatch {
    pub image: MultiChannelImage,
    pub target: BinaryMask,
}

/// A validation image as patches, scored after reconstruction.
#[derive(Debug, Clone)]
pub struct ValImage {
    pub grid: PatchGrid,
    pub patches: Vec<MultiChannelImage>,
    pub target: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_dsc: f64,
}

#[derive(Debug, Clone)]
struct Partial {
    sum_p: f64,
    sum_g: f64,
    inter: f64,
    /// Σ s·f and Σ g·s·f with s = p(1 - p).
    sf: Vec<f64>,
    gsf: Vec<f64>,
}

impl Partial {
    fn zero(dim: usize) -> Self {
        Self {
            sum_p: 0.0,
            sum_g: 0.0,
            inter: 0.0,
            sf: vec![0.0; dim],
            gsf: vec![0.0; dim],
        }
    }

    fn add(&mut self, o: &Partial) {
        self.sum_p += o.sum_p;
        self.sum_g += o.sum_g;
        self.inter += o.inter;
        for (a, b) in self.sf.iter_mut().zip(&o.sf) {
            *a += b;
        }
        for (a, b) in self.gsf.iter_mut().zip(&o.gsf) {
            *a += b;
        }
    }
}

fn patch_partial(weights: &[f64], patch: &TrainPatch) -> Partial {
    let f = featurize(&patch.image);
    let mut acc = Partial::zero(f.dim);
    for (i, &g) in patch.target.bits().iter().enumerate() {
        let x = f.pixel(i);
        let p = sigmoid(dot(weights, x));
        let g = g as f64;
        let s = p * (1.0 - p);
        acc.sum_p += p;
        acc.sum_g += g;
        acc.inter += p * g;
        for (k, &fk) in x.iter().enumerate() {
            let v = s * fk as f64;
            acc.sf[k] += v;
            acc.gsf[k] += g * v;
        }
    }
    acc
}

/// Soft-Dice loss of a batch (all pixels pooled) and its gradient with
/// respect to the weights.
pub fn objective(weights: &[f64], batch: &[&TrainPatch], eps: f64) -> (f64, Vec<f64>) {
    let partials: Vec<Partial> = batch.par_iter().map(|p| patch_partial(weights, p)).collect();
    let mut total = Partial::zero(weights.len());
    for p in &partials {
        total.add(p);
    }
    let num = 2.0 * total.inter + eps;
    let den = total.sum_p + total.sum_g + eps;
    let loss = 1.0 - num / den;
    let a = num / (den * den);
    let b = 2.0 / den;
    let grad = total
        .sf
        .iter()
        .zip(&total.gsf)
        .map(|(sf, gsf)| a * sf - b * gsf)
        .collect();
    (loss, grad)
}

/// Mean per-image DSC of thresholded, reconstructed predictions.
pub fn validation_dsc(model: &PixelModel, val: &[ValImage], t: f32) -> Result<f64> {
    let scores = val
        .par_iter()
        .map(|v| {
            let probs = v
                .patches
                .iter()
                .map(|p| predict(model, p))
                .collect::<Result<Vec<_>>>()?;
            let full = reconstruct(&probs, &v.grid)?;
            Ok(evaluate(&threshold(&full, t), &v.target)?.dsc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Train from zero weights; returns the weights of the epoch with the
/// highest validation DSC (earliest on ties).
pub fn train(
    train: &[TrainPatch],
    val: &[ValImage],
    config: &TrainConfig,
) -> Result<(PixelModel, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training patches"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("no validation images"));
    }
    let channels = train[0].image.channels();
    for img in train.iter().map(|p| &p.image).chain(val.iter().flat_map(|v| &v.patches)) {
        if img.channels() != channels {
            return Err(Error::ChannelMismatch {
                expected: channels,
                actual: img.channels(),
            });
        }
    }
    let mut model = PixelModel::zeros(channels);
    let mut state = AdamState::new(model.weights.len());
    let adam = config.adam();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        CounterRng::new(config.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainPatch> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = objective(&model.weights, &batch, config.eps_dice);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            adam_update(&mut model.weights, &grad, &mut state, &adam);
            loss_sum += loss;
            batches += 1;
        }
        let val_dsc = validation_dsc(&model, val, config.threshold)?;
        log::debug!("epoch {epoch}: loss {:.5} val dsc {val_dsc:.4}", loss_sum / batches as f64);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_dsc,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_dsc > *b) {
            best = Some((val_dsc, epoch, model.weights.clone()));
        }
    }
    let (best_val_dsc, best_epoch, weights) = best.expect("at least one epoch");
    model.weights = weights;
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_dsc,
        },
    ))
}
