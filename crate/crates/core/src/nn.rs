//! Multilayer perceptron used as the desk-scale client model.
//!
//! Layers are stored as `fc{i}.weight` with shape `[fan_in, fan_out]` followed
//! by `fc{i}.bias` with shape `[fan_out]`. Hidden layers use ReLU; the output
//! layer feeds a softmax cross-entropy loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::model::{LayerTensor, ModelWeights, TensorShape};
use crate::rng::{self, Purpose};

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub momentum: f32,
    pub seed: u64,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be ≥ 0", self.learning_rate)));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and local_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 8, local_epochs: 1, momentum: 0.0, seed: 0 }
    }
}

/// Builds an MLP with Gaussian weights and biases scaled by `1/sqrt(fan_in)`.
pub fn init_model(feature_dim: usize, hidden_dims: &[usize], num_classes: usize, seed: u64) -> Result<ModelWeights> {
    if feature_dim == 0 || num_classes < 2 || hidden_dims.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive and num_classes ≥ 2".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Init, 0);
    let widths: Vec<usize> =
        std::iter::once(feature_dim).chain(hidden_dims.iter().copied()).chain(std::iter::once(num_classes)).collect();
    let mut layers = Vec::with_capacity(2 * (widths.len() - 1));
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32).collect()
        };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        layers.push(LayerTensor::new(format!("fc{i}.weight"), TensorShape::new(vec![fan_in, fan_out])?, w)?);
        layers.push(LayerTensor::new(format!("fc{i}.bias"), TensorShape::new(vec![fan_out])?, b)?);
    }
    ModelWeights::new(layers)
}

/// Layer geometry extracted from a model's weight/bias pairs.
#[derive(Debug, Clone)]
struct Arch {
    /// (fan_in, fan_out) per dense layer.
    dense: Vec<(usize, usize)>,
}

impl Arch {
    fn of(model: &ModelWeights) -> Result<Self> {
        let layers = model.layers();
        if !layers.len().is_multiple_of(2) {
            return Err(Error::ShapeMismatch("MLP needs weight/bias pairs".into()));
        }
        let mut dense = Vec::with_capacity(layers.len() / 2);
        for pair in layers.chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            let (wd, bd) = (w.shape().dims(), b.shape().dims());
            if wd.len() != 2 || bd.len() != 1 || bd[0] != wd[1] {
                return Err(Error::ShapeMismatch(format!(
                    "layers {:?}/{:?} are not a dense weight/bias pair",
                    w.name(),
                    b.name()
                )));
            }
            if let Some(&(_, prev_out)) = dense.last() {
                if prev_out != wd[0] {
                    return Err(Error::ShapeMismatch(format!("layer {:?} fan-in mismatch", w.name())));
                }
            }
            dense.push((wd[0], wd[1]));
        }
        Ok(Self { dense })
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        let (fan_in, _) = self.dense[0];
        let (_, out) = *self.dense.last().expect("non-empty");
        if fan_in != data.feature_dim() || out != data.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "model maps {fan_in} → {out} but data has {} features and {} classes",
                data.feature_dim(),
                data.num_classes()
            )));
        }
        Ok(())
    }
}

/// Forward pass; returns activations per layer (input first, logits last).
fn forward(model: &ModelWeights, arch: &Arch, x: &[f32]) -> Vec<Vec<f32>> {
    let layers = model.layers();
    let mut acts = Vec::with_capacity(arch.dense.len() + 1);
    acts.push(x.to_vec());
    for (li, &(fan_in, fan_out)) in arch.dense.iter().enumerate() {
        let w = layers[2 * li].values();
        let b = layers[2 * li + 1].values();
        let input = acts.last().expect("input present");
        let mut z = b.to_vec();
        for i in 0..fan_in {
            let xi = input[i];
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * fan_out..(i + 1) * fan_out];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        if li + 1 < arch.dense.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Numerically stable softmax probabilities and the cross-entropy for `label`.
fn softmax_xent(logits: &[f32], label: usize) -> (Vec<f32>, f32) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let probs: Vec<f32> = exps.iter().map(|e| e / sum).collect();
    let loss = -((logits[label] - max) - sum.ln());
    (probs, loss)
}

/// Accumulates the gradient of one sample's loss into `grads` (same layout as
/// the model); returns the sample loss.
fn backward(model: &ModelWeights, arch: &Arch, x: &[f32], label: usize, grads: &mut [Vec<f32>]) -> f32 {
    let acts = forward(model, arch, x);
    let (probs, loss) = softmax_xent(acts.last().expect("logits"), label);
    let mut delta = probs;
    delta[label] -= 1.0;
    let layers = model.layers();
    for li in (0..arch.dense.len()).rev() {
        let (fan_in, fan_out) = arch.dense[li];
        let input = &acts[li];
        {
            let gw = &mut grads[2 * li];
            for i in 0..fan_in {
                let xi = input[i];
                if xi == 0.0 {
                    continue;
                }
                for (g, d) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
        }
        grads[2 * li + 1].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        if li > 0 {
            let w = layers[2 * li].values();
            let mut prev = vec![0.0f32; fan_in];
            for (i, p) in prev.iter_mut().enumerate() {
                if input[i] <= 0.0 {
                    continue;
                }
                let row = &w[i * fan_out..(i + 1) * fan_out];
                *p = row.iter().zip(&delta).map(|(a, b)| a * b).sum();
            }
            delta = prev;
        }
    }
    loss
}

/// Result of a local training call with side statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelWeights,
    /// Mean training loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Mini-batch gradient variance E‖g_b − ḡ‖² over the final epoch.
    pub grad_variance: f64,
    /// Number of forward+backward sample passes performed.
    pub samples_processed: u64,
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
pub fn local_train(model: &ModelWeights, shard: &ClientShard, hyper: &TrainHyper) -> Result<ModelWeights> {
    local_train_with_stats(model, shard, hyper).map(|o| o.model)
}

pub fn local_train_with_stats(model: &ModelWeights, shard: &ClientShard, hyper: &TrainHyper) -> Result<TrainOutcome> {
    hyper.validate()?;
    let arch = Arch::of(model)?;
    let data = &shard.dataset;
    arch.check_data(data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("client shard is empty".into()));
    }

    let mut rng = rng::rng_from_seed(hyper.seed);
    let mut current = model.clone();
    let mut velocity: Vec<Vec<f32>> = model.layers().iter().map(|l| vec![0.0; l.len()]).collect();
    let mut grads: Vec<Vec<f32>> = velocity.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.local_epochs);
    let mut grad_variance = 0.0;
    let mut samples_processed = 0u64;

    for epoch in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == hyper.local_epochs;
        let mut loss_sum = 0.0f64;
        let mut g_sum: Vec<Vec<f64>> = if last_epoch {
            model.layers().iter().map(|l| vec![0.0; l.len()]).collect()
        } else {
            Vec::new()
        };
        let mut g_sq_sum = 0.0f64;
        let mut batches = 0usize;

        for (batch, idx) in order.chunks(hyper.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            let mut batch_loss = 0.0f32;
            for &i in idx {
                batch_loss += backward(&current, &arch, data.row(i), data.labels()[i] as usize, &mut grads);
            }
            samples_processed += idx.len() as u64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += f64::from(batch_loss);
            let inv = 1.0 / idx.len() as f32;
            for (layer, (g, v)) in current.layers_mut().iter_mut().zip(grads.iter_mut().zip(velocity.iter_mut())) {
                for ((w, gi), vi) in layer.values_mut().iter_mut().zip(g.iter_mut()).zip(v.iter_mut()) {
                    *gi *= inv;
                    *vi = hyper.momentum * *vi + *gi;
                    let step = hyper.learning_rate * *vi;
                    if step != 0.0 {
                        *w -= step;
                    }
                }
            }
            if current.flat_values().any(|w| !w.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            if last_epoch {
                for (acc, g) in g_sum.iter_mut().zip(&grads) {
                    for (a, &gi) in acc.iter_mut().zip(g) {
                        *a += f64::from(gi);
                        g_sq_sum += f64::from(gi) * f64::from(gi);
                    }
                }
                batches += 1;
            }
        }
        epoch_losses.push(loss_sum / data.len() as f64);
        if last_epoch && batches > 0 {
            let b = batches as f64;
            let mean_sq: f64 = g_sum.iter().flatten().map(|s| (s / b) * (s / b)).sum();
            grad_variance = (g_sq_sum / b - mean_sq).max(0.0);
        }
    }

    Ok(TrainOutcome { model: current, epoch_losses, grad_variance, samples_processed })
}

/// Predicted class per sample; ties go to the lowest class id.
pub fn predict(model: &ModelWeights, dataset: &Dataset) -> Result<Vec<u32>> {
    let arch = Arch::of(model)?;
    arch.check_data(dataset)?;
    Ok((0..dataset.len())
        .map(|i| {
            let acts = forward(model, &arch, dataset.row(i));
            let logits = acts.last().expect("logits");
            let mut best = 0usize;
            for (c, &z) in logits.iter().enumerate().skip(1) {
                if z > logits[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect())
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &ModelWeights, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(model, dataset)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean softmax cross-entropy over the dataset.
pub fn mean_loss(model: &ModelWeights, dataset: &Dataset) -> Result<f64> {
    let arch = Arch::of(model)?;
    arch.check_data(dataset)?;
    let total: f64 = (0..dataset.len())
        .map(|i| {
            let acts = forward(model, &arch, dataset.row(i));
            f64::from(softmax_xent(acts.last().expect("logits"), dataset.labels()[i] as usize).1)
        })
        .sum();
    Ok(total / dataset.len().max(1) as f64)
}
