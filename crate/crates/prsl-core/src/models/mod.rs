//! Two small differentiable models, a deterministic SGD trainer, and
//! checkpoint persistence. Everything here is pinned to f64.

pub mod captioner;
pub mod checkpoint;
pub mod classifier;
pub mod train;

pub use captioner::{CaptionerSpec, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN};
pub use checkpoint::{Checkpoint, ModelSpec, TrainMeta, CHECKPOINT_VERSION};
pub use classifier::{ClassifierSpec, ImageShape};
pub use train::{sgd_step, train_captioner, train_classifier, TrainConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::{ParamStore, Tensor};

/// Uniform init in [-s, s] with s = 1 / sqrt(fan_in), drawn row-major.
pub(crate) fn init_uniform(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    fan_in: usize,
) -> Tensor {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::from_parts(shape, data)
}

pub(crate) fn insert_param(
    store: &mut ParamStore,
    name: &str,
    tensor: Tensor,
) -> Result<()> {
    store.insert(name.to_string(), tensor)
}
