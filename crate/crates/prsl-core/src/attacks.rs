//! Untargeted iterative sign-gradient (BIM) attacks on model inputs.
//!
//! Each iteration ascends the cross-entropy of the clean reference output by
//! one `alpha`-sized sign step, clipped to the `eps` ball around the original
//! image and to the valid pixel range. Iterations are grouped into rounds,
//! the unit the degradation reports are plotted over.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::{cross_entropy, cross_entropy_grad};
use crate::models::captioner::{self, CaptionerSpec};
use crate::models::classifier::{self, ClassifierSpec};
use crate::models::train::teacher_forcing_pair;
use crate::scalar::Scalar;
use crate::tensor::TensorBase;
use crate::{Gradient, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity ball radius around the original image, in pixel units.
    pub eps: f64,
    /// Per-iteration step size, same units.
    pub alpha: f64,
    pub iters_per_round: usize,
    pub rounds: usize,
    /// Valid pixel interval.
    pub clamp: (f64, f64),
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { eps: 0.1, alpha: 0.02, iters_per_round: 1, rounds: 10, clamp: (0.0, 1.0) }
    }
}

impl AttackConfig {
    pub fn new(eps: f64, alpha: f64, rounds: usize) -> Self {
        Self { eps, alpha, rounds, ..Self::default() }
    }

    /// eps/alpha reported for full-scale ViT-GPT2 captioning attacks. The
    /// pixel normalization those values assume is not specified, so this is
    /// a labeled preset rather than a default.
    pub fn preset_vit_gpt2(rounds: usize) -> Self {
        Self { eps: 0.5, alpha: 0.01, rounds, ..Self::default() }
    }

    /// eps/alpha reported for full-scale Blip2-OPT VQA attacks; same caveat
    /// as [`AttackConfig::preset_vit_gpt2`].
    pub fn preset_blip2_opt(rounds: usize) -> Self {
        Self { eps: 1.0, alpha: 0.5, rounds, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(CoreError::InvalidConfig { context: "attack config", detail });
        if !(self.eps > 0.0) {
            return fail(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.rounds == 0 || self.iters_per_round == 0 {
            return fail("rounds and iters_per_round must be >= 1".to_string());
        }
        if !(self.clamp.0 < self.clamp.1) {
            return fail(format!("clamp interval {:?} is empty", self.clamp));
        }
        Ok(())
    }
}

/// Image and attack loss recorded at the end of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSnapshot {
    pub image: Tensor,
    pub loss: f64,
}

/// The full history of one attack: the clean image plus one snapshot per
/// round, each within the eps ball and the clamp range, with round r+1
/// continuing from round r's image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    pub original: Tensor,
    pub rounds: Vec<RoundSnapshot>,
    pub config: AttackConfig,
}

impl AttackTrace {
    /// Image after `round` rounds; round 0 is the clean image.
    pub fn image_at(&self, round: usize) -> &Tensor {
        if round == 0 {
            &self.original
        } else {
            &self.rounds[round - 1].image
        }
    }
}

/// Anything that can report the attack loss and its input gradient. The
/// attacker always ascends plain cross-entropy of the clean reference, no
/// matter which loss the parameters were trained with.
pub trait AttackTarget {
    fn loss_and_input_grad(&self, image: &Tensor) -> Result<(f64, Gradient)>;
}

/// Classifier under attack: reference output is the clean label.
pub struct ClassifierTarget<'a> {
    pub spec: &'a ClassifierSpec,
    pub params: &'a ParamStore,
    pub label: usize,
}

impl AttackTarget for ClassifierTarget<'_> {
    fn loss_and_input_grad(&self, image: &Tensor) -> Result<(f64, Gradient)> {
        let (logits, cache) = classifier::forward_cached(image, self.params, self.spec)?;
        let loss = cross_entropy(&logits, self.label)?;
        let d_logits = cross_entropy_grad(&logits, self.label)?;
        let (_, d_image) = classifier::backward(&d_logits, &cache, self.params, self.spec)?;
        Ok((loss, d_image))
    }
}

/// Captioner under attack: reference output is the clean caption, teacher
/// forced; the loss is the mean per-position cross-entropy.
pub struct CaptionerTarget<'a> {
    pub spec: &'a CaptionerSpec,
    pub params: &'a ParamStore,
    pub reference: &'a [usize],
}

impl AttackTarget for CaptionerTarget<'_> {
    fn loss_and_input_grad(&self, image: &Tensor) -> Result<(f64, Gradient)> {
        if self.reference.is_empty() {
            return Err(CoreError::InvalidInput {
                context: "captioner attack",
                detail: "empty reference caption".to_string(),
            });
        }
        let (prefix, targets) = teacher_forcing_pair(self.reference, self.spec.context);
        let (rows, cache) = captioner::forward_cached(image, &prefix, self.params, self.spec)?;
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        let mut d_rows = Vec::with_capacity(rows.len());
        for (row, &label) in rows.iter().zip(&targets) {
            loss += cross_entropy(row, label)? * scale;
            d_rows.push(cross_entropy_grad(row, label)?.scale(scale));
        }
        let (_, d_image) = captioner::backward(&d_rows, &cache, self.params, self.spec)?;
        Ok((loss, d_image))
    }
}

/// Gradient of the attack loss with respect to the input pixels.
pub fn input_gradient(target: &impl AttackTarget, image: &Tensor) -> Result<Gradient> {
    target.loss_and_input_grad(image).map(|(_, g)| g)
}

/// One sign step, clipped to the eps ball around `origin` and to `clamp`.
/// sign(0) = 0.
pub fn bim_step<S: Scalar>(
    image: &TensorBase<S>,
    pixel_gradient: &TensorBase<S>,
    alpha: S,
    origin: &TensorBase<S>,
    eps: S,
    clamp: (S, S),
) -> Result<TensorBase<S>> {
    if image.shape() != pixel_gradient.shape() || image.shape() != origin.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "bim step",
            left: image.shape().to_vec(),
            right: pixel_gradient.shape().to_vec(),
        });
    }
    if !(alpha > S::zero()) {
        return Err(CoreError::InvalidConfig {
            context: "bim step",
            detail: format!("alpha must be > 0, got {alpha}"),
        });
    }
    let data = image
        .data()
        .iter()
        .zip(pixel_gradient.data())
        .zip(origin.data())
        .map(|((&x, &g), &o)| {
            let sign = if g > S::zero() {
                S::one()
            } else if g < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            let stepped = x + alpha * sign;
            let balled = stepped.min(o + eps).max(o - eps);
            balled.min(clamp.1).max(clamp.0)
        })
        .collect();
    Ok(TensorBase::from_parts(image.shape().to_vec(), data))
}

/// Run `rounds x iters_per_round` BIM iterations from the clean image,
/// recording a snapshot and the attack loss after each round.
pub fn bim_attack(
    target: &impl AttackTarget,
    image: &Tensor,
    config: &AttackConfig,
) -> Result<AttackTrace> {
    config.validate()?;
    let mut trace =
        AttackTrace { original: image.clone(), rounds: Vec::with_capacity(config.rounds), config: *config };
    let mut current = image.clone();
    run_rounds(target, &mut trace, &mut current, config.rounds)?;
    Ok(trace)
}

/// Extend an existing trace by `extra_rounds`, continuing from its last
/// snapshot with the same origin and config.
pub fn bim_continue(
    target: &impl AttackTarget,
    trace: &AttackTrace,
    extra_rounds: usize,
) -> Result<AttackTrace> {
    let mut extended = trace.clone();
    let mut current = extended.image_at(extended.rounds.len()).clone();
    run_rounds(target, &mut extended, &mut current, extra_rounds)?;
    Ok(extended)
}

fn run_rounds(
    target: &impl AttackTarget,
    trace: &mut AttackTrace,
    current: &mut Tensor,
    rounds: usize,
) -> Result<()> {
    let config = trace.config;
    for _ in 0..rounds {
        let round_index = trace.rounds.len();
        for _ in 0..config.iters_per_round {
            let (_, grad) = target.loss_and_input_grad(current)?;
            *current = bim_step(
                current,
                &grad,
                config.alpha,
                &trace.original,
                config.eps,
                config.clamp,
            )?;
        }
        let (loss, _) = target.loss_and_input_grad(current)?;
        if !loss.is_finite() {
            return Err(CoreError::AttackFailure {
                round: round_index,
                detail: format!("non-finite attack loss {loss}"),
            });
        }
        trace.rounds.push(RoundSnapshot { image: current.clone(), loss });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn sign_step_before_clipping() {
        let x = vec_t(&[0.5, 0.5, 0.5]);
        let g = vec_t(&[0.3, -0.2, 0.0]);
        let out = bim_step(&x, &g, 0.01, &x, 1.0, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(out.data()[0], 0.51, epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[1], 0.49, epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[2], 0.50, epsilon = 1e-15);
    }

    #[test]
    fn scalar_trace_hits_the_ball_boundary() {
        // x0 = 0.5, always stepping up by 0.1 with eps = 0.15:
        // 0.6, then 0.65 (clipped), then 0.65.
        let origin = vec_t(&[0.5, 0.5]);
        let g = vec_t(&[1.0, 1.0]);
        let mut x = origin.clone();
        let mut seen = Vec::new();
        for _ in 0..3 {
            x = bim_step(&x, &g, 0.1, &origin, 0.15, (0.0, 1.0)).unwrap();
            seen.push(x.data()[0]);
        }
        assert_abs_diff_eq!(seen[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(seen[1], 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(seen[2], 0.65, epsilon = 1e-15);
    }

    #[test]
    fn range_clamp_caps_at_one() {
        let origin = vec_t(&[0.99]);
        let g = vec_t(&[5.0]);
        let x = bim_step(&origin, &g, 0.1, &origin, 0.5, (0.0, 1.0)).unwrap();
        assert_eq!(x.data(), &[1.0]);
    }

    #[test]
    fn zero_eps_is_rejected_by_validation() {
        let cfg = AttackConfig { eps: 0.0, ..AttackConfig::default() };
        assert!(matches!(cfg.validate(), Err(CoreError::InvalidConfig { .. })));
    }

    #[test]
    fn zero_weight_classifier_has_zero_input_gradient() {
        let spec = ClassifierSpec {
            image: crate::models::ImageShape::new(2, 2, 1),
            hidden: vec![3],
            classes: 4,
        };
        let params = spec.init_params(0).unwrap().zeros_like();
        let target = ClassifierTarget { spec: &spec, params: &params, label: 1 };
        let g = input_gradient(&target, &vec_t(&[0.1, 0.9, 0.4, 0.7])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_counts_match_rounds() {
        let spec = ClassifierSpec {
            image: crate::models::ImageShape::new(2, 2, 1),
            hidden: vec![3],
            classes: 4,
        };
        let params = spec.init_params(4).unwrap();
        let target = ClassifierTarget { spec: &spec, params: &params, label: 0 };
        let image = vec_t(&[0.2, 0.4, 0.6, 0.8]);
        let cfg = AttackConfig { rounds: 2, ..AttackConfig::default() };
        let trace = bim_attack(&target, &image, &cfg).unwrap();
        assert_eq!(trace.rounds.len(), 2);
        assert_eq!(trace.image_at(0), &image);
    }

    #[test]
    fn generic_step_works_in_f32() {
        let x = TensorBase::<f32>::vector(vec![0.5]).unwrap();
        let g = TensorBase::<f32>::vector(vec![-1.0]).unwrap();
        let out = bim_step(&x, &g, 0.25f32, &x, 0.1f32, (0.0f32, 1.0f32)).unwrap();
        assert!((out.data()[0] - 0.4).abs() < 1e-6);
    }
}
