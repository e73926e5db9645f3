//! Deterministic SGD-with-momentum trainer for both models.
//!
//! Given the same config and dataset, training is bit-reproducible: the
//! shuffle stream, batch order, and every reduction are fixed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::{prsl_grad, prsl_loss, sequence_prsl, sequence_prsl_grad};
use crate::{LossConfig, ParamStore, Tensor};

use super::captioner::{self, CaptionerSpec, BOS_TOKEN};
use super::checkpoint::{Checkpoint, ModelSpec, TrainMeta, CHECKPOINT_VERSION};
use super::classifier::{self, ClassifierSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(CoreError::InvalidConfig { context: "train config", detail });
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".to_string());
        }
        Ok(())
    }
}

/// v <- momentum * v + g;  p <- p - lr * v.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    velocity: &mut ParamStore,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    let names: Vec<String> = grads.names().map(str::to_string).collect();
    for name in names {
        let g = grads.get(&name)?.clone();
        let v = velocity.values_mut(&name)?;
        if v.len() != g.len() {
            return Err(CoreError::ShapeMismatch {
                context: "sgd step",
                left: vec![v.len()],
                right: vec![g.len()],
            });
        }
        for (vi, &gi) in v.iter_mut().zip(g.data()) {
            *vi = momentum * *vi + gi;
        }
        let v_now: Vec<f64> = v.to_vec();
        let p = params.values_mut(&name)?;
        for (pi, vi) in p.iter_mut().zip(v_now) {
            *pi -= learning_rate * vi;
        }
    }
    Ok(())
}

/// Final reduced losses of the last epoch.
#[derive(Debug, Clone, Copy, Default)]
struct EpochLoss {
    total: f64,
    ce: f64,
    penalty: f64,
}

fn shuffled_batches(
    count: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train the classifier with mini-batch SGD on the configured loss.
pub fn train_classifier(
    images: &[Tensor],
    labels: &[usize],
    config: &TrainConfig,
    spec: &ClassifierSpec,
) -> Result<Checkpoint> {
    train_classifier_observed(images, labels, config, spec, |_, _| {})
}

/// Same as [`train_classifier`], invoking `on_epoch` with the parameters
/// after each epoch's updates.
pub fn train_classifier_observed(
    images: &[Tensor],
    labels: &[usize],
    config: &TrainConfig,
    spec: &ClassifierSpec,
    mut on_epoch: impl FnMut(usize, &ParamStore),
) -> Result<Checkpoint> {
    config.validate()?;
    spec.validate()?;
    config.loss.validate(spec.classes)?;
    if images.is_empty() || images.len() != labels.len() {
        return Err(CoreError::InvalidInput {
            context: "classifier training",
            detail: format!("{} images vs {} labels", images.len(), labels.len()),
        });
    }

    let mut params = spec.init_params(config.seed)?;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut last = EpochLoss::default();

    for epoch in 0..config.epochs {
        let mut epoch_loss = EpochLoss::default();
        let mut batches = 0usize;
        for batch in shuffled_batches(images.len(), config.batch_size, &mut rng) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = params.zeros_like();
            let mut batch_loss = EpochLoss::default();
            for &idx in &batch {
                let (logits, cache) =
                    classifier::forward_cached(&images[idx], &params, spec)?;
                let breakdown = prsl_loss(&logits, labels[idx], &config.loss)?;
                batch_loss.total += breakdown.total * scale;
                batch_loss.ce += breakdown.ce * scale;
                batch_loss.penalty += breakdown.penalty * scale;
                let d_logits = prsl_grad(&logits, labels[idx], &config.loss)?.scale(scale);
                let (item_grads, _) = classifier::backward(&d_logits, &cache, &params, spec)?;
                accumulate(&mut grads, &item_grads)?;
            }
            if !batch_loss.total.is_finite() {
                return Err(CoreError::TrainingFailure {
                    epoch,
                    detail: format!("non-finite batch loss {}", batch_loss.total),
                });
            }
            sgd_step(&mut params, &grads, &mut velocity, config.learning_rate, config.momentum)?;
            epoch_loss.total += batch_loss.total;
            epoch_loss.ce += batch_loss.ce;
            epoch_loss.penalty += batch_loss.penalty;
            batches += 1;
        }
        let n = batches as f64;
        last = EpochLoss { total: epoch_loss.total / n, ce: epoch_loss.ce / n, penalty: epoch_loss.penalty / n };
        on_epoch(epoch, &params);
    }

    let spec = ModelSpec::Classifier(spec.clone());
    Ok(finish(spec, params, config, last))
}

/// Train the captioner with teacher forcing on the configured loss.
///
/// Each caption is the label sequence; the decoder input is BOS followed by
/// all but its last token, truncated to the context length.
pub fn train_captioner(
    images: &[Tensor],
    captions: &[Vec<usize>],
    config: &TrainConfig,
    spec: &CaptionerSpec,
) -> Result<Checkpoint> {
    config.validate()?;
    spec.validate()?;
    config.loss.validate(spec.vocab)?;
    if images.is_empty() || images.len() != captions.len() {
        return Err(CoreError::InvalidInput {
            context: "captioner training",
            detail: format!("{} images vs {} captions", images.len(), captions.len()),
        });
    }
    if captions.iter().any(|c| c.is_empty()) {
        return Err(CoreError::InvalidInput {
            context: "captioner training",
            detail: "empty caption".to_string(),
        });
    }

    let mut params = spec.init_params(config.seed)?;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut last = EpochLoss::default();

    for epoch in 0..config.epochs {
        let mut epoch_loss = EpochLoss::default();
        let mut batches = 0usize;
        for batch in shuffled_batches(images.len(), config.batch_size, &mut rng) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = params.zeros_like();
            let mut batch_loss = EpochLoss::default();
            for &idx in &batch {
                let (prefix, targets) = teacher_forcing_pair(&captions[idx], spec.context);
                let (rows, cache) =
                    captioner::forward_cached(&images[idx], &prefix, &params, spec)?;
                let breakdown = sequence_prsl(&rows, &targets, &config.loss)?;
                batch_loss.total += breakdown.total * scale;
                batch_loss.ce += breakdown.ce * scale;
                batch_loss.penalty += breakdown.penalty * scale;
                let d_rows: Vec<Tensor> = sequence_prsl_grad(&rows, &targets, &config.loss)?
                    .into_iter()
                    .map(|g| g.scale(scale))
                    .collect();
                let (item_grads, _) = captioner::backward(&d_rows, &cache, &params, spec)?;
                accumulate(&mut grads, &item_grads)?;
            }
            if !batch_loss.total.is_finite() {
                return Err(CoreError::TrainingFailure {
                    epoch,
                    detail: format!("non-finite batch loss {}", batch_loss.total),
                });
            }
            sgd_step(&mut params, &grads, &mut velocity, config.learning_rate, config.momentum)?;
            epoch_loss.total += batch_loss.total;
            epoch_loss.ce += batch_loss.ce;
            epoch_loss.penalty += batch_loss.penalty;
            batches += 1;
        }
        let n = batches as f64;
        last = EpochLoss { total: epoch_loss.total / n, ce: epoch_loss.ce / n, penalty: epoch_loss.penalty / n };
    }

    let spec = ModelSpec::Captioner(spec.clone());
    Ok(finish(spec, params, config, last))
}

/// Decoder input and per-position targets for one caption.
pub fn teacher_forcing_pair(caption: &[usize], context: usize) -> (Vec<usize>, Vec<usize>) {
    let max_targets = context.min(caption.len());
    let targets: Vec<usize> = caption[..max_targets].to_vec();
    let mut prefix = Vec::with_capacity(max_targets);
    prefix.push(BOS_TOKEN);
    prefix.extend_from_slice(&caption[..max_targets - 1]);
    (prefix, targets)
}

fn accumulate(into: &mut ParamStore, from: &ParamStore) -> Result<()> {
    let names: Vec<String> = from.names().map(str::to_string).collect();
    for name in names {
        let g = from.get(&name)?.clone();
        let acc = into.values_mut(&name)?;
        for (a, &b) in acc.iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok(())
}

fn finish(spec: ModelSpec, params: ParamStore, config: &TrainConfig, last: EpochLoss) -> Checkpoint {
    let config_hash = Checkpoint::config_hash(config, &spec);
    Checkpoint {
        version: CHECKPOINT_VERSION,
        spec,
        params,
        meta: TrainMeta {
            config_hash,
            final_total: last.total,
            final_ce: last.ce,
            final_penalty: last.penalty,
            epochs: config.epochs,
            seed: config.seed,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossConfigBase, RankWindow};
    use crate::models::classifier::ImageShape;
    use approx::assert_abs_diff_eq;

    fn tiny_spec() -> ClassifierSpec {
        ClassifierSpec { image: ImageShape::new(2, 2, 1), hidden: vec![4], classes: 4 }
    }

    fn tiny_data(spec: &ClassifierSpec, n: usize) -> (Vec<Tensor>, Vec<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let images = (0..n)
            .map(|_| {
                Tensor::vector(
                    (0..spec.image.pixels()).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let labels = (0..n).map(|i| i % spec.classes).collect();
        (images, labels)
    }

    fn config(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            loss: LossConfigBase::new(0.01, RankWindow::new(2, 3)),
            learning_rate: lr,
            momentum: 0.9,
            epochs,
            batch_size: 4,
            seed: 42,
        }
    }

    #[test]
    fn sgd_without_momentum_is_vanilla() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("p", Tensor::vector(vec![0.5, -1.0]).unwrap()).unwrap();
        let mut velocity = params.zeros_like();
        sgd_step(&mut params, &grads, &mut velocity, 0.1, 0.0).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[0.95, 2.1]);
    }

    #[test]
    fn sgd_zero_gradient_leaves_params_unchanged() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::vector(vec![1.5]).unwrap()).unwrap();
        let grads = params.zeros_like();
        let mut velocity = params.zeros_like();
        sgd_step(&mut params, &grads, &mut velocity, 0.3, 0.9).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[1.5]);
    }

    #[test]
    fn sgd_momentum_matches_hand_trace() {
        // Two steps, constant gradient 0.5, lr 0.1, momentum 0.9:
        // v1 = 0.5,  p1 = 0.95;  v2 = 0.95,  p2 = 0.855.
        let mut params = ParamStore::new();
        params.insert("p", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("p", Tensor::vector(vec![0.5]).unwrap()).unwrap();
        let mut velocity = params.zeros_like();
        sgd_step(&mut params, &grads, &mut velocity, 0.1, 0.9).unwrap();
        assert_abs_diff_eq!(params.get("p").unwrap().data()[0], 0.95, epsilon = 1e-15);
        sgd_step(&mut params, &grads, &mut velocity, 0.1, 0.9).unwrap();
        assert_abs_diff_eq!(params.get("p").unwrap().data()[0], 0.855, epsilon = 1e-15);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let spec = tiny_spec();
        let (images, labels) = tiny_data(&spec, 12);
        let cfg = config(0.05, 3);
        let a = train_classifier(&images, &labels, &cfg, &spec).unwrap();
        let b = train_classifier(&images, &labels, &cfg, &spec).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn zero_learning_rate_is_rejected() {
        let spec = tiny_spec();
        let (images, labels) = tiny_data(&spec, 4);
        let mut cfg = config(0.0, 1);
        cfg.learning_rate = 0.0;
        assert!(matches!(
            train_classifier(&images, &labels, &cfg, &spec),
            Err(CoreError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn b_zero_training_matches_an_independent_ce_loop() {
        use crate::losses::cross_entropy_grad;

        let spec = tiny_spec();
        let (images, labels) = tiny_data(&spec, 10);
        let mut cfg = config(0.05, 3);
        cfg.loss = LossConfigBase::new(0.0, RankWindow::new(2, 3));

        let mut observed: Vec<Vec<u64>> = Vec::new();
        train_classifier_observed(&images, &labels, &cfg, &spec, |_, params| {
            observed.push(
                params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect(),
            );
        })
        .unwrap();

        // Plain cross-entropy loop replicating the same shuffle stream.
        let mut params = spec.init_params(cfg.seed).unwrap();
        let mut velocity = params.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for epoch in 0..cfg.epochs {
            for batch in shuffled_batches(images.len(), cfg.batch_size, &mut rng) {
                let scale = 1.0 / batch.len() as f64;
                let mut grads = params.zeros_like();
                for &idx in &batch {
                    let (logits, cache) =
                        classifier::forward_cached(&images[idx], &params, &spec).unwrap();
                    let d = cross_entropy_grad(&logits, labels[idx]).unwrap().scale(scale);
                    let (g, _) = classifier::backward(&d, &cache, &params, &spec).unwrap();
                    accumulate(&mut grads, &g).unwrap();
                }
                sgd_step(&mut params, &grads, &mut velocity, cfg.learning_rate, cfg.momentum)
                    .unwrap();
            }
            let bits: Vec<u64> =
                params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect();
            assert_eq!(bits, observed[epoch], "trajectories diverged at epoch {epoch}");
        }
    }

    #[test]
    fn captioner_training_runs_and_is_reproducible() {
        let spec = CaptionerSpec {
            image: ImageShape::new(2, 2, 1),
            feature_hidden: 3,
            embed_dim: 4,
            vocab: 8,
            context: 5,
            heads: 1,
        };
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let images: Vec<Tensor> = (0..6)
            .map(|_| {
                Tensor::vector((0..4).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
            })
            .collect();
        let captions: Vec<Vec<usize>> =
            (0..6).map(|i| vec![3 + (i % 4), 4, super::super::EOS_TOKEN]).collect();
        let cfg = TrainConfig {
            loss: LossConfigBase::new(0.01, RankWindow::new(2, 4)),
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 2,
            batch_size: 3,
            seed: 7,
        };
        let a = train_captioner(&images, &captions, &cfg, &spec).unwrap();
        let b = train_captioner(&images, &captions, &cfg, &spec).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(a.meta.final_total.is_finite());
    }
}
