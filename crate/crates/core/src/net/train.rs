use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Parameters;
use super::network::{image_batch, volume_batch, Mode, Network};
use super::tensor::Tensor4;
use super::weights::NetworkWeights;
use super::Scalar;
use crate::error::{invalid, mismatch, Error, Result};
use crate::image::XRayImage;
use crate::volume::Volume;

/// Mean squared voxel difference.
pub fn loss_l2(prediction: &Volume, target: &Volume) -> Result<f64> {
    if prediction.dims() != target.dims() {
        return Err(mismatch!("prediction {:?} vs target {:?}", prediction.dims(), target.dims()));
    }
    Ok(sum_sq(prediction.data(), target.data()) / prediction.len() as f64)
}

fn sum_sq<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum()
}

/// Loss and gradient `2 (pred - target) / N` for raw network outputs.
pub fn loss_l2_tensor(prediction: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if prediction.dims() != target.dims() {
        return Err(invalid!("prediction {:?} vs target {:?}", prediction.dims(), target.dims()));
    }
    let n = prediction.data().len() as f64;
    let loss = sum_sq(prediction.data(), target.data()) / n;
    let scale = 2.0 / n;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| ((p as f64 - t as f64) * scale) as Scalar)
        .collect();
    Ok((loss, Tensor4::new(prediction.dims(), grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for every trainable parameter, in
/// visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    moments: Vec<(Vec<Scalar>, Vec<Scalar>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, moments: Vec::new() }
    }

    pub fn step(&mut self, net: &mut impl Parameters) {
        self.step += 1;
        let c = self.cfg;
        let bias1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let (b1, b2) = (c.beta1 as Scalar, c.beta2 as Scalar);
        let lr = (c.learning_rate / bias1) as Scalar;
        let inv_bias2 = (1.0 / bias2) as Scalar;
        let eps = c.epsilon as Scalar;
        let moments = &mut self.moments;
        let mut i = 0;
        net.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() <= i {
                moments.push((alloc::vec![0.0; p.value.len()], alloc::vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[i];
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * *m / (super::sqrt(*v * inv_bias2) + eps);
            }
            i += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds both initialization (by the caller) and shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, adam: AdamConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: XRayImage,
    pub volume: Volume,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-mode minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss, or the final weights when
    /// there is no validation set.
    pub weights: NetworkWeights,
    pub best_epoch: usize,
    pub initial_val_loss: Option<f64>,
    pub history: Vec<EpochStats>,
}

/// Mean voxel loss over `samples` with inference-mode normalization.
pub fn evaluate_loss(net: &Network, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("no samples to evaluate"));
    }
    let cfg = *net.config();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, y) = batch(chunk, &cfg)?;
        let out = net.infer(&x)?;
        total += sum_sq(out.data(), y.data());
        count += out.data().len();
    }
    Ok(total / count as f64)
}

fn batch(samples: &[Sample], cfg: &super::NetworkConfig) -> Result<(Tensor4, Tensor4)> {
    let images: Vec<XRayImage> = samples.iter().map(|s| s.image.clone()).collect();
    let volumes: Vec<Volume> = samples.iter().map(|s| s.volume.clone()).collect();
    Ok((image_batch(&images, cfg.input_size)?, volume_batch(&volumes, cfg.output_dims())?))
}

/// One optimizer step on a minibatch; returns its loss.
pub fn train_step(net: &mut Network, adam: &mut Adam, samples: &[Sample]) -> Result<f64> {
    let (x, y) = batch(samples, &net.config().clone())?;
    net.zero_grad();
    let out = net.forward(&x, Mode::Train)?;
    let (loss, grad) = loss_l2_tensor(&out, &y)?;
    if !loss.is_finite() {
        return Err(Error::Diverged(alloc::format!("minibatch loss is {loss}")));
    }
    net.backward(&grad)?;
    adam.step(net);
    Ok(loss)
}

/// Minibatch Adam over shuffled training samples. Calls `on_epoch` after
/// every epoch and returns the best-validation weights.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(invalid!("training needs at least one sample"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let val = |net: &Network| -> Result<Option<f64>> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            evaluate_loss(net, val_set, cfg.batch_size).map(Some)
        }
    };
    let initial_val_loss = val(net)?;
    let mut best = (initial_val_loss.unwrap_or(f64::INFINITY), 0usize, net.to_weights());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut picked: Vec<Sample> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            picked.clear();
            picked.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let loss = train_step(net, &mut adam, &picked)
                .map_err(|e| match e {
                    Error::Diverged(m) => Error::Diverged(alloc::format!("epoch {epoch}, batch {batches}: {m}")),
                    other => other,
                })?;
            sum += loss;
            batches += 1;
        }
        let val_loss = val(net)?;
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Diverged(alloc::format!("validation loss is {v} after epoch {epoch}")));
            }
        }
        let stats = EpochStats { epoch, train_loss: sum / batches as f64, val_loss };
        on_epoch(&stats);
        history.push(stats);
        match val_loss {
            Some(v) if v < best.0 => best = (v, epoch, net.to_weights()),
            None => best = (f64::INFINITY, epoch, net.to_weights()),
            _ => {}
        }
    }
    Ok(TrainOutcome { weights: best.2, best_epoch: best.1, initial_val_loss, history })
}
