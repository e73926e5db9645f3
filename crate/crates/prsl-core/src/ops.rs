//! Paired forward/backward primitives the models are assembled from.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// A normalized softmax output: values sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDistBase<S> {
    probs: Vec<S>,
}

impl<S: Scalar> ProbDistBase<S> {
    pub(crate) fn from_normalized(probs: Vec<S>) -> Self {
        Self { probs }
    }

    pub fn values(&self) -> &[S] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<S> {
        self.probs
    }
}

fn check_logits<S: Scalar>(logits: &TensorBase<S>) -> Result<&[S]> {
    let values = logits.as_vector()?;
    if values.len() < 2 {
        return Err(CoreError::InvalidDimension {
            context: "softmax",
            detail: format!("need at least 2 logits, got {}", values.len()),
        });
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite { context: "softmax input" });
    }
    Ok(values)
}

/// Max-subtracted softmax over a logit vector.
pub fn softmax<S: Scalar>(logits: &TensorBase<S>) -> Result<ProbDistBase<S>> {
    let values = check_logits(logits)?;
    let max = values.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().cloned().sum();
    Ok(ProbDistBase::from_normalized(exps.into_iter().map(|e| e / total).collect()))
}

/// log(softmax(z)) computed as z - max - log(sum(exp(z - max))).
pub fn log_softmax<S: Scalar>(logits: &TensorBase<S>) -> Result<TensorBase<S>> {
    let values = check_logits(logits)?;
    let max = values.iter().cloned().fold(S::neg_infinity(), S::max);
    let log_sum: S = values.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
    let data = values.iter().map(|&v| v - max - log_sum).collect();
    Ok(TensorBase::from_parts(vec![values.len()], data))
}

/// y = W x + b for a 2-D weight (out x in), 1-D input, and 1-D bias.
pub fn affine<S: Scalar>(
    input: &TensorBase<S>,
    weight: &TensorBase<S>,
    bias: &TensorBase<S>,
) -> Result<TensorBase<S>> {
    let x = input.as_vector()?;
    let (out_dim, in_dim) = weight.dim2()?;
    let b = bias.as_vector()?;
    if x.len() != in_dim || b.len() != out_dim {
        return Err(CoreError::ShapeMismatch {
            context: "affine",
            left: weight.shape().to_vec(),
            right: vec![x.len(), b.len()],
        });
    }
    let w = weight.data();
    let mut y = Vec::with_capacity(out_dim);
    for row in 0..out_dim {
        let mut acc = b[row];
        let base = row * in_dim;
        for col in 0..in_dim {
            acc = acc + w[base + col] * x[col];
        }
        y.push(acc);
    }
    Ok(TensorBase::from_parts(vec![out_dim], y))
}

/// Gradients of `affine` with respect to (input, weight, bias).
pub fn affine_backward<S: Scalar>(
    upstream: &TensorBase<S>,
    input: &TensorBase<S>,
    weight: &TensorBase<S>,
) -> Result<(TensorBase<S>, TensorBase<S>, TensorBase<S>)> {
    let u = upstream.as_vector()?;
    let x = input.as_vector()?;
    let (out_dim, in_dim) = weight.dim2()?;
    if u.len() != out_dim || x.len() != in_dim {
        return Err(CoreError::ShapeMismatch {
            context: "affine backward",
            left: weight.shape().to_vec(),
            right: vec![u.len(), x.len()],
        });
    }
    let w = weight.data();
    let mut d_input = vec![S::zero(); in_dim];
    let mut d_weight = vec![S::zero(); out_dim * in_dim];
    for row in 0..out_dim {
        let base = row * in_dim;
        let g = u[row];
        for col in 0..in_dim {
            d_input[col] = d_input[col] + w[base + col] * g;
            d_weight[base + col] = g * x[col];
        }
    }
    Ok((
        TensorBase::from_parts(vec![in_dim], d_input),
        TensorBase::from_parts(vec![out_dim, in_dim], d_weight),
        TensorBase::from_parts(vec![out_dim], u.to_vec()),
    ))
}

/// Element-wise max(0, x).
pub fn relu<S: Scalar>(input: &TensorBase<S>) -> TensorBase<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Backward of relu; the subgradient at exactly zero is zero.
pub fn relu_backward<S: Scalar>(
    upstream: &TensorBase<S>,
    input: &TensorBase<S>,
) -> Result<TensorBase<S>> {
    if upstream.shape() != input.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "relu backward",
            left: upstream.shape().to_vec(),
            right: input.shape().to_vec(),
        });
    }
    let data = upstream
        .data()
        .iter()
        .zip(input.data())
        .map(|(&u, &x)| if x > S::zero() { u } else { S::zero() })
        .collect();
    Ok(TensorBase::from_parts(input.shape().to_vec(), data))
}

// 2-D helpers for the attention block. Internal: the public surface of this
// module is the layer-op pairs above.

pub(crate) fn matmul<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> Result<TensorBase<S>> {
    let (ar, ac) = a.dim2()?;
    let (br, bc) = b.dim2()?;
    if ac != br {
        return Err(CoreError::ShapeMismatch {
            context: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![S::zero(); ar * bc];
    let ad = a.data();
    let bd = b.data();
    for i in 0..ar {
        for k in 0..ac {
            let aik = ad[i * ac + k];
            if aik == S::zero() {
                continue;
            }
            let brow = k * bc;
            let orow = i * bc;
            for j in 0..bc {
                out[orow + j] = out[orow + j] + aik * bd[brow + j];
            }
        }
    }
    Ok(TensorBase::from_parts(vec![ar, bc], out))
}

pub(crate) fn transpose<S: Scalar>(a: &TensorBase<S>) -> Result<TensorBase<S>> {
    let (r, c) = a.dim2()?;
    let ad = a.data();
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = ad[i * c + j];
        }
    }
    Ok(TensorBase::from_parts(vec![c, r], out))
}

/// Outer product u vᵀ as a (|u| x |v|) matrix.
pub(crate) fn outer<S: Scalar>(u: &[S], v: &[S]) -> TensorBase<S> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        for &b in v {
            out.push(a * b);
        }
    }
    TensorBase::from_parts(vec![u.len(), v.len()], out)
}

/// Wᵀ u for a 2-D weight (out x in) and a 1-D upstream of length out.
pub(crate) fn matvec_t<S: Scalar>(weight: &TensorBase<S>, u: &[S]) -> Result<Vec<S>> {
    let (out_dim, in_dim) = weight.dim2()?;
    debug_assert_eq!(u.len(), out_dim);
    let w = weight.data();
    let mut out = vec![S::zero(); in_dim];
    for row in 0..out_dim {
        let base = row * in_dim;
        let g = u[row];
        for col in 0..in_dim {
            out[col] = out[col] + w[base + col] * g;
        }
    }
    Ok(out)
}
