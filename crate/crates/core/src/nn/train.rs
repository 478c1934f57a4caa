//! Seeded mini-batch training with deep supervision, and inference.
//!
//! Per-sample gradients within a batch are computed on the rayon pool and
//! then summed sequentially in batch order, so results do not depend on the
//! number of worker threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{cube_size, LossKind};
use super::network::{Network, NetworkConfig};
use super::tensor::{downsample, Scalar, Tensor};
use crate::degrade::{default_flat_field_sigma, pseudo_flat_field};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::{DensityVolume, GridSpec};

/// Floor applied to transmission before flat-field correction.
pub const MIN_TRANSMISSION: f64 = 1e-6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    8
}
fn default_epochs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: LossKind,
    /// Per-head weights; empty means equal weights summing to one.
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            lambda: Vec::new(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, heads: usize) -> Vec<f64> {
        if self.lambda.is_empty() {
            vec![1.0 / heads as f64; heads]
        } else {
            self.lambda.clone()
        }
    }

    pub fn validate(&self, heads: usize) -> Result<()> {
        let w = self.weights(heads);
        if w.len() != heads {
            return Err(Error::invalid(format!("{} loss weights for {heads} heads", w.len())));
        }
        if w.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("lambda must be non-negative with a positive sum"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// One training pair: a preprocessed `[S, S]` image and its `[R, R, R]`
/// target in `[0, 1]` at the largest head resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub target: Tensor<f32>,
}

/// Mean per-sample losses after `epoch` updates (epoch 0 is before training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub head_losses: Vec<f64>,
    pub combined: f64,
    pub val_head_losses: Vec<f64>,
    pub val_combined: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: Vec<EpochRecord>,
}

fn check_samples(config: &NetworkConfig, set: &[Sample], name: &str) -> Result<()> {
    let n = config.input_size;
    let r = config.max_resolution();
    for (i, s) in set.iter().enumerate() {
        let img_ok = s.image.shape == [n, n] || s.image.shape == [1, n, n];
        if !img_ok {
            return Err(Error::shape(format!("{name} sample {i} image"), &[n, n], &s.image.shape));
        }
        if s.target.shape != [r, r, r] {
            return Err(Error::shape(format!("{name} sample {i} target"), &[r, r, r], &s.target.shape));
        }
    }
    Ok(())
}

/// Mean per-head and combined losses over a set (zeros if empty).
pub fn evaluate(network: &Network<f32>, set: &[Sample], loss: LossKind, lambda: &[f64]) -> Result<(Vec<f64>, f64)> {
    let heads = network.config.head_resolutions.len();
    if set.is_empty() {
        return Ok((vec![0.0; heads], 0.0));
    }
    let per_sample = set
        .par_iter()
        .map(|s| {
            let heads_out = network.forward(&s.image)?;
            let (per, combined) = super::loss::deep_supervision_terms(
                &heads_out.iter().map(Tensor::cast::<f64>).collect::<Vec<_>>(),
                &s.target.cast::<f64>(),
                loss,
                lambda,
            )?;
            Ok((per, combined))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = set.len() as f64;
    let mut per = vec![0.0; heads];
    let mut combined = 0.0;
    for (p, c) in &per_sample {
        for (a, b) in per.iter_mut().zip(p) {
            *a += b;
        }
        combined += c;
    }
    per.iter_mut().for_each(|v| *v /= n);
    Ok((per, combined / n))
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

/// Trains a freshly initialized network (seeded by `train.seed`).
pub fn train(net_config: &NetworkConfig, train: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome> {
    let network = Network::<f32>::init(net_config.clone(), train.seed)?;
    train_from(network, train, train_set, val_set, |_| {})
}

/// Continues training `network`, calling `on_epoch` after every record.
pub fn train_from(
    mut network: Network<f32>,
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let heads = network.config.head_resolutions.len();
    config.validate(heads)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_samples(&network.config, train_set, "train")?;
    check_samples(&network.config, val_set, "val")?;
    let lambda = config.weights(heads);

    let record = |network: &Network<f32>, epoch: usize| -> Result<EpochRecord> {
        let (head_losses, combined) = evaluate(network, train_set, config.loss, &lambda)?;
        let (val_head_losses, val_combined) = evaluate(network, val_set, config.loss, &lambda)?;
        if !combined.is_finite() || !val_combined.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        Ok(EpochRecord {
            epoch,
            head_losses,
            combined,
            val_head_losses,
            val_combined,
        })
    };

    let mut history = vec![record(&network, 0)?];
    on_epoch(&history[0]);

    let mut adam = AdamState {
        m: network.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        v: network.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    network.loss_and_gradients(&s.image, &s.target, config.loss, &lambda)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads: Vec<Vec<f64>> = network.params.iter().map(|p| vec![0.0; p.len()]).collect();
            for g in &per_sample {
                if !g.combined.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                for (acc, pg) in grads.iter_mut().zip(&g.grads.params) {
                    if let Some(pg) = pg {
                        for (a, &b) in acc.iter_mut().zip(pg) {
                            *a += b as f64;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            apply_update(&mut network, &grads, config, &mut adam);
        }
        let rec = record(&network, epoch)?;
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { network, history })
}

fn apply_update(network: &mut Network<f32>, grads: &[Vec<f64>], config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in network.params.iter_mut().zip(grads) {
                for (w, &d) in p.data.iter_mut().zip(g) {
                    *w = (*w as f64 - lr * d) as f32;
                }
            }
        }
        Optimizer::Adam => {
            adam.step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(adam.step);
            let c2 = 1.0 - ADAM_BETA2.powi(adam.step);
            for (k, (p, g)) in network.params.iter_mut().zip(grads).enumerate() {
                let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
                for (i, (w, &d)) in p.data.iter_mut().zip(g).enumerate() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * d;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * d * d;
                    let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPSILON);
                    *w = (*w as f64 - step) as f32;
                }
            }
        }
    }
}

/// Mean |downsample(largest head) − smallest head| in occupancy units.
pub fn head_consistency<T: Scalar>(heads: &[Tensor<T>]) -> Result<f64> {
    let (Some(first), Some(last)) = (heads.first(), heads.last()) else {
        return Err(Error::invalid("no heads"));
    };
    let (r0, r1) = match (cube_size(first), cube_size(last)) {
        (Some(a), Some(b)) if a > 0 && b % a == 0 => (a, b),
        _ => return Err(Error::shape("head_consistency", &first.shape, &last.shape)),
    };
    let coarse = downsample(last, r1 / r0)?;
    let sum: f64 = coarse
        .data
        .iter()
        .zip(&first.data)
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(sum / first.len() as f64)
}

/// Maps network occupancy back to physical density and grid placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeScale {
    pub density_scale: f64,
    pub extent: f64,
    #[serde(default)]
    pub origin: [f64; 3],
}

/// Network input from a transmission radiograph: clamp, pseudo-flat-field.
pub fn preprocess(transmission: &Image) -> Result<Image> {
    let clamped = transmission.map(|v| v.max(MIN_TRANSMISSION));
    pseudo_flat_field(&clamped, default_flat_field_sigma(&clamped))
}

pub fn image_tensor(image: &Image) -> Tensor<f32> {
    Tensor {
        shape: vec![image.rows, image.cols],
        data: image.data.iter().map(|&v| v as f32).collect(),
        grad: None,
    }
}

/// Largest-head prediction scaled to density on a grid of that resolution.
///
/// `image` must already be preprocessed.
pub fn reconstruct<T: Scalar>(network: &Network<T>, scale: &VolumeScale, image: &Image) -> Result<DensityVolume> {
    let heads = network.forward(&image_tensor(image).cast())?;
    let top = heads.last().ok_or_else(|| Error::invalid("network has no heads"))?;
    let r = network.config.max_resolution();
    let grid = GridSpec::unchecked(r, scale.extent, scale.origin);
    grid.validate()?;
    let values = top
        .data
        .iter()
        .map(|&v| (v.as_f64().max(0.0) * scale.density_scale) as f32)
        .collect();
    DensityVolume::from_values(grid, values)
}

/// Intersection over union of `a > threshold` and `b > threshold`.
pub fn occupancy_iou(a: &[f32], b: &[f32], threshold: f32) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (p, q) = (x > threshold, y > threshold);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
