//! Numeric core: dense tensors with paired forward/backward ops, the
//! rank-window recentralization loss, two toy differentiable models with a
//! deterministic trainer, and iterative sign-gradient input attacks.
//!
//! The math is generic over the scalar type ([`scalar::Scalar`], f32 or
//! f64); the aliases below pin the f64 instantiation used by the models,
//! checkpoints, and experiment harness.

pub mod attacks;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod ops;
pub mod scalar;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Dense f64 tensor.
pub type Tensor = tensor::TensorBase<f64>;
/// Gradient of a scalar with respect to a tensor: same shape/data contract.
pub type Gradient = tensor::TensorBase<f64>;
/// Normalized f64 softmax output.
pub type ProbDist = ops::ProbDistBase<f64>;
/// Named f64 parameter map with deterministic iteration order.
pub type ParamStore = tensor::ParamStoreBase<f64>;
/// Loss configuration with an f64 penalty weight.
pub type LossConfig = losses::LossConfigBase<f64>;
/// Evaluated f64 loss breakdown.
pub type LossBreakdown = losses::LossBreakdownBase<f64>;
