//! Flatten -> affine -> ReLU -> ... -> affine MLP image classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ops::{affine, affine_backward, relu, relu_backward};
use crate::{Gradient, ParamStore, Tensor};

use super::{init_uniform, insert_param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub image: ImageShape,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { image: ImageShape::new(12, 12, 3), hidden: vec![64], classes: 16 }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(CoreError::InvalidConfig {
                context: "classifier spec",
                detail: format!("need at least 2 classes, got {}", self.classes),
            });
        }
        if self.image.pixels() == 0 {
            return Err(CoreError::InvalidConfig {
                context: "classifier spec",
                detail: "image has zero pixels".to_string(),
            });
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(CoreError::InvalidConfig {
                context: "classifier spec",
                detail: "hidden layer of width 0".to_string(),
            });
        }
        Ok(())
    }

    /// Layer widths including input and output: [pixels, hidden..., classes].
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.image.pixels());
        w.extend_from_slice(&self.hidden);
        w.push(self.classes);
        w
    }

    fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = self.widths();
        let mut params = ParamStore::new();
        for layer in 0..self.layer_count() {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            insert_param(
                &mut params,
                &format!("layer{layer}.weight"),
                init_uniform(&mut rng, vec![fan_out, fan_in], fan_in),
            )?;
            insert_param(
                &mut params,
                &format!("layer{layer}.bias"),
                init_uniform(&mut rng, vec![fan_out], fan_in),
            )?;
        }
        Ok(params)
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let pixels = self.image.pixels();
        let ok = match image.shape() {
            [n] => *n == pixels,
            [h, w, c] => h * w * c == pixels,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidInput {
                context: "classifier forward",
                detail: format!(
                    "image shape {:?} does not match spec ({} pixels)",
                    image.shape(),
                    pixels
                ),
            })
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ClassifierCache {
    /// Input to each affine layer (flattened image first).
    layer_inputs: Vec<Tensor>,
    /// Pre-activation output of each hidden affine layer.
    pre_activations: Vec<Tensor>,
}

pub fn forward(image: &Tensor, params: &ParamStore, spec: &ClassifierSpec) -> Result<Tensor> {
    forward_cached(image, params, spec).map(|(logits, _)| logits)
}

pub fn forward_cached(
    image: &Tensor,
    params: &ParamStore,
    spec: &ClassifierSpec,
) -> Result<(Tensor, ClassifierCache)> {
    spec.check_image(image)?;
    let flat = Tensor::from_parts(vec![image.len()], image.data().to_vec());
    let mut cache = ClassifierCache { layer_inputs: Vec::new(), pre_activations: Vec::new() };
    let mut current = flat;
    let last = spec.layer_count() - 1;
    for layer in 0..=last {
        let w = params.get(&format!("layer{layer}.weight"))?;
        let b = params.get(&format!("layer{layer}.bias"))?;
        cache.layer_inputs.push(current.clone());
        let pre = affine(&current, w, b)?;
        if layer < last {
            cache.pre_activations.push(pre.clone());
            current = relu(&pre);
        } else {
            current = pre;
        }
    }
    Ok((current, cache))
}

/// Gradients of a scalar loss with respect to all parameters and the image,
/// given the loss gradient at the logits.
pub fn backward(
    d_logits: &Tensor,
    cache: &ClassifierCache,
    params: &ParamStore,
    spec: &ClassifierSpec,
) -> Result<(ParamStore, Gradient)> {
    let last = spec.layer_count() - 1;
    let mut grads = ParamStore::new();
    let mut upstream = d_logits.clone();
    for layer in (0..=last).rev() {
        let w = params.get(&format!("layer{layer}.weight"))?;
        let input = &cache.layer_inputs[layer];
        let (d_input, d_weight, d_bias) = affine_backward(&upstream, input, w)?;
        grads.insert(format!("layer{layer}.weight"), d_weight)?;
        grads.insert(format!("layer{layer}.bias"), d_bias)?;
        upstream = if layer > 0 {
            relu_backward(&d_input, &cache.pre_activations[layer - 1])?
        } else {
            d_input
        };
    }
    Ok((grads, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::losses::{cross_entropy, cross_entropy_grad};
    use crate::ops::softmax;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn tiny_spec() -> ClassifierSpec {
        ClassifierSpec { image: ImageShape::new(2, 2, 1), hidden: vec![3], classes: 4 }
    }

    fn random_image(rng: &mut ChaCha8Rng, spec: &ClassifierSpec) -> Tensor {
        let data = (0..spec.image.pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::vector(data).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let spec = tiny_spec();
        let params = spec.init_params(0).unwrap().zeros_like();
        let image = Tensor::vector(vec![0.3, 0.8, 0.1, 0.9]).unwrap();
        let logits = forward(&image, &params, &spec).unwrap();
        assert_eq!(logits.data(), &[0.0; 4]);
        let p = softmax(&logits).unwrap();
        for &v in p.values() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let spec = tiny_spec();
        let image = Tensor::vector(vec![0.3, 0.8, 0.1, 0.9]).unwrap();
        let a = forward(&image, &spec.init_params(7).unwrap(), &spec).unwrap();
        let b = forward(&image, &spec.init_params(7).unwrap(), &spec).unwrap();
        let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn rejects_mismatched_image() {
        let spec = tiny_spec();
        let params = spec.init_params(0).unwrap();
        let image = Tensor::vector(vec![0.0; 5]).unwrap();
        assert!(matches!(
            forward(&image, &params, &spec),
            Err(CoreError::InvalidInput { .. })
        ));
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = spec.init_params(11).unwrap();
        let image = random_image(&mut rng, &spec);
        let label = 2usize;

        let (logits, cache) = forward_cached(&image, &params, &spec).unwrap();
        let d_logits = cross_entropy_grad(&logits, label).unwrap();
        let (grads, d_image) = backward(&d_logits, &cache, &params, &spec).unwrap();

        // Image gradient.
        let err = grad_check(
            |x| cross_entropy(&forward(x, &params, &spec)?, label),
            &d_image,
            &image,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "image rel err {err}");

        // Every parameter gradient.
        for (name, analytic) in grads.iter() {
            let point = params.get(name).unwrap().clone();
            let err = grad_check(
                |t| {
                    let mut perturbed = params.clone();
                    perturbed.values_mut(name).unwrap().copy_from_slice(t.data());
                    cross_entropy(&forward(&image, &perturbed, &spec)?, label)
                },
                analytic,
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{name} rel err {err}");
        }
    }
}
