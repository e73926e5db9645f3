//! Cross-entropy, the rank-window recentralization penalty, and their
//! analytic gradients.
//!
//! The combined loss is
//! `CE(logits, label) + b * d(window(softmax(logits)), mean)`, where the
//! window picks the probabilities at descending ranks `j..=k` and `d` is the
//! Euclidean distance from those values to their common mean. With `b = 0`
//! the loss and its gradient reduce to plain cross-entropy exactly.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ops::{log_softmax, softmax, ProbDistBase};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

/// Squared-distance values below this are treated as exactly zero when
/// differentiating: sqrt is singular at 0 and 0 is the minimizer, so the
/// zero subgradient applies.
const ZERO_DISTANCE_GUARD: f64 = 1e-24;

/// Inclusive span of descending-probability ranks, 1-indexed.
///
/// `(1, k)` restricts the k largest probabilities; `(2, k)` leaves the top
/// probability untouched and restricts the runners-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankWindow {
    pub j: usize,
    pub k: usize,
}

impl RankWindow {
    pub fn new(j: usize, k: usize) -> Self {
        Self { j, k }
    }

    /// Ranks 2..=k: the default reading of "restrict the top-k outputs"
    /// that leaves the rank-1 probability free.
    pub fn from_second_to(k: usize) -> Self {
        Self { j: 2, k }
    }

    /// Ranks 1..=k.
    pub fn from_top_to(k: usize) -> Self {
        Self { j: 1, k }
    }

    pub fn size(&self) -> usize {
        self.k + 1 - self.j
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.j >= 1 && self.j <= self.k && self.k <= classes {
            Ok(())
        } else {
            Err(CoreError::InvalidWindow { j: self.j, k: self.k, classes })
        }
    }
}

/// Distance between the windowed probabilities and their mean. Euclidean is
/// the only built-in; the enum leaves room for alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
}

/// How per-position losses combine over a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceReduction {
    /// Keeps the penalty weight's effective scale independent of length.
    #[default]
    Mean,
    Sum,
}

/// Full configuration of the loss: penalty weight, rank window, distance,
/// and sequence reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfigBase<S> {
    pub b: S,
    pub window: RankWindow,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub sequence_reduction: SequenceReduction,
}

impl<S: Scalar> LossConfigBase<S> {
    pub fn new(b: S, window: RankWindow) -> Self {
        Self { b, window, distance: Distance::Euclidean, sequence_reduction: SequenceReduction::Mean }
    }

    /// Plain cross-entropy: zero penalty weight.
    pub fn cross_entropy_only() -> Self {
        Self::new(S::zero(), RankWindow::new(1, 1))
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.b < S::zero() || !self.b.is_finite() {
            return Err(CoreError::InvalidConfig {
                context: "loss config",
                detail: format!("penalty weight must be finite and >= 0, got {}", self.b),
            });
        }
        self.window.validate(classes)
    }
}

/// One evaluated loss: `total = ce + b * penalty`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdownBase<S> {
    pub total: S,
    pub ce: S,
    /// The raw distance value, before weighting by `b`.
    pub penalty: S,
    /// Class indices inside the rank window, in rank order. Empty for
    /// sequence losses, where each position selects its own window.
    pub selected_indices: Vec<usize>,
}

/// -log softmax(logits)[label].
pub fn cross_entropy<S: Scalar>(logits: &TensorBase<S>, label: usize) -> Result<S> {
    let classes = logits.len();
    if label >= classes {
        return Err(CoreError::InvalidLabel { label, classes });
    }
    let ls = log_softmax(logits)?;
    let ce = -ls.data()[label];
    // A dominant correct logit yields -0.0; normalize the sign.
    Ok(if ce == S::zero() { S::zero() } else { ce })
}

/// Gradient of cross-entropy with respect to the logits: p - one_hot(label).
pub fn cross_entropy_grad<S: Scalar>(logits: &TensorBase<S>, label: usize) -> Result<TensorBase<S>> {
    let classes = logits.len();
    if label >= classes {
        return Err(CoreError::InvalidLabel { label, classes });
    }
    let probs = softmax(logits)?;
    let mut grad = probs.into_vec();
    grad[label] = grad[label] - S::one();
    Ok(TensorBase::from_parts(vec![classes], grad))
}

/// Entries at descending-probability ranks `j..=k`.
///
/// Ties break toward the lower class index, so the selection is
/// deterministic on every platform.
pub fn select_rank_window<S: Scalar>(
    probs: &ProbDistBase<S>,
    window: RankWindow,
) -> Result<Vec<(usize, S)>> {
    window.validate(probs.len())?;
    let values = probs.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).expect("probabilities are finite").then(a.cmp(&b))
    });
    Ok(order[window.j - 1..window.k].iter().map(|&i| (i, values[i])).collect())
}

/// Euclidean distance from the values to the constant vector of their mean:
/// sqrt(sum_i (v_i - mean)^2).
pub fn recentralization_distance<S: Scalar>(values: &[S]) -> Result<S> {
    if values.is_empty() {
        return Err(CoreError::InvalidWindow { j: 0, k: 0, classes: 0 });
    }
    let n = S::of(values.len() as f64);
    let mean = values.iter().cloned().sum::<S>() / n;
    let sum_sq = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>();
    Ok(sum_sq.sqrt())
}

/// The combined loss at one position.
pub fn prsl_loss<S: Scalar>(
    logits: &TensorBase<S>,
    label: usize,
    config: &LossConfigBase<S>,
) -> Result<LossBreakdownBase<S>> {
    config.validate(logits.len())?;
    let ce = cross_entropy(logits, label)?;
    let probs = softmax(logits)?;
    let selected = select_rank_window(&probs, config.window)?;
    let values: Vec<S> = selected.iter().map(|&(_, v)| v).collect();
    let penalty = recentralization_distance(&values)?;
    Ok(LossBreakdownBase {
        total: ce + config.b * penalty,
        ce,
        penalty,
        selected_indices: selected.into_iter().map(|(i, _)| i).collect(),
    })
}

/// Analytic gradient of the combined loss with respect to the logits.
///
/// The rank-selected index set is held fixed for the forward pass
/// (piecewise-smooth subgradient, exact wherever the window boundary is
/// tie-free); the probabilities and their window mean are differentiated in
/// full.
pub fn prsl_grad<S: Scalar>(
    logits: &TensorBase<S>,
    label: usize,
    config: &LossConfigBase<S>,
) -> Result<TensorBase<S>> {
    config.validate(logits.len())?;
    if config.b == S::zero() {
        // Exact-reduction contract: bitwise the cross-entropy path.
        return cross_entropy_grad(logits, label);
    }

    let classes = logits.len();
    if label >= classes {
        return Err(CoreError::InvalidLabel { label, classes });
    }
    let probs = softmax(logits)?;
    let p = probs.values();

    let selected = select_rank_window(&probs, config.window)?;
    let n = S::of(selected.len() as f64);
    let mean = selected.iter().map(|&(_, v)| v).sum::<S>() / n;
    let sum_sq = selected.iter().map(|&(_, v)| (v - mean) * (v - mean)).sum::<S>();

    // dL/dp: only the penalty contributes here; the CE part is folded in
    // below in logit space. d = sqrt(s) with s = sum (p_w - mean)^2, and
    // because the deviations from the window mean sum to zero the chain
    // through the mean cancels, leaving dd/dp_w = (p_w - mean) / d.
    let mut dl_dp = vec![S::zero(); classes];
    if sum_sq > S::of(ZERO_DISTANCE_GUARD) {
        let dist = sum_sq.sqrt();
        for &(idx, v) in &selected {
            dl_dp[idx] = config.b * (v - mean) / dist;
        }
    }

    // Softmax VJP: dz_j = p_j * (u_j - sum_i u_i p_i).
    let inner: S = dl_dp.iter().zip(p).map(|(&u, &pi)| u * pi).sum();
    let mut grad: Vec<S> = p
        .iter()
        .zip(&dl_dp)
        .map(|(&pi, &u)| pi * (u - inner))
        .collect();

    // CE gradient in logit space: p - one_hot(label).
    for (g, &pi) in grad.iter_mut().zip(p) {
        *g = *g + pi;
    }
    grad[label] = grad[label] - S::one();
    Ok(TensorBase::from_parts(vec![classes], grad))
}

/// Per-position losses combined over a sequence.
///
/// `ce` and `penalty` are reduced separately (mean or sum), and
/// `total = ce + b * penalty` holds for the reduced values.
pub fn sequence_prsl<S: Scalar>(
    logit_rows: &[TensorBase<S>],
    token_labels: &[usize],
    config: &LossConfigBase<S>,
) -> Result<LossBreakdownBase<S>> {
    if logit_rows.is_empty() || logit_rows.len() != token_labels.len() {
        return Err(CoreError::InvalidSequence {
            logits: logit_rows.len(),
            labels: token_labels.len(),
        });
    }
    let mut ce = S::zero();
    let mut penalty = S::zero();
    for (row, &label) in logit_rows.iter().zip(token_labels) {
        let step = prsl_loss(row, label, config)?;
        ce = ce + step.ce;
        penalty = penalty + step.penalty;
    }
    if config.sequence_reduction == SequenceReduction::Mean {
        let n = S::of(logit_rows.len() as f64);
        ce = ce / n;
        penalty = penalty / n;
    }
    Ok(LossBreakdownBase {
        total: ce + config.b * penalty,
        ce,
        penalty,
        selected_indices: Vec::new(),
    })
}

/// Per-row gradients of [`sequence_prsl`] with respect to each logit row.
pub fn sequence_prsl_grad<S: Scalar>(
    logit_rows: &[TensorBase<S>],
    token_labels: &[usize],
    config: &LossConfigBase<S>,
) -> Result<Vec<TensorBase<S>>> {
    if logit_rows.is_empty() || logit_rows.len() != token_labels.len() {
        return Err(CoreError::InvalidSequence {
            logits: logit_rows.len(),
            labels: token_labels.len(),
        });
    }
    let scale = match config.sequence_reduction {
        SequenceReduction::Mean => S::one() / S::of(logit_rows.len() as f64),
        SequenceReduction::Sum => S::one(),
    };
    logit_rows
        .iter()
        .zip(token_labels)
        .map(|(row, &label)| {
            let g = prsl_grad(row, label, config)?;
            Ok(if scale == S::one() { g } else { g.scale(scale) })
        })
        .collect()
}
