//! Causal scaled-dot-product attention for a single head, with rotary
//! position encoding, logit-scaling hooks, and per-row entropy capture.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::rope::{self, FrequencySpectrum, RopeConfig, RopeError};
use crate::scaling::ScalingPolicy;
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("Q/K/V shapes disagree: q={q:?}, k={k:?}, v={v:?}")]
    ShapeMismatch {
        q: (usize, usize),
        k: (usize, usize),
        v: (usize, usize),
    },
    #[error("head dimension {got} does not match rope config d={expected}")]
    HeadDimMismatch { got: usize, expected: usize },
    #[error("non-finite value in attention inputs")]
    NonFinite,
    #[error("probability vector not normalized: sum={sum}")]
    NotNormalized { sum: f64 },
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error(transparent)]
    Rope(#[from] RopeError),
}

/// What `attend` records alongside its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Record nothing.
    Off,
    /// Record only per-row entropies; memory stays linear in sequence length.
    EntropyOnly,
    /// Record the full row-stochastic probability matrix and entropies.
    Full,
}

/// Attention probabilities and entropies captured from one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T: Real> {
    /// Lower-triangular row-stochastic matrix; `None` unless `TraceMode::Full`.
    pub probs: Option<Array2<T>>,
    /// Shannon entropy of each query row; empty when tracing is off.
    pub entropy: Vec<T>,
}

/// Shannon entropy `-sum p ln p` of a probability vector, with `0 ln 0 = 0`.
pub fn attention_entropy<T: Real>(p: &[T]) -> Result<T, AttentionError> {
    let mut sum = T::zero();
    let mut entropy = T::zero();
    for &v in p {
        if v < T::zero() {
            return Err(AttentionError::NegativeProbability(
                v.to_f64().unwrap_or(f64::NAN),
            ));
        }
        sum += v;
        if v > T::zero() {
            entropy = entropy - v * v.ln();
        }
    }
    if (sum - T::one()).abs() > T::normalization_tolerance() {
        return Err(AttentionError::NotNormalized {
            sum: sum.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(entropy)
}

/// Numerically stable softmax (max subtraction) over a logit slice.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Causal attention for one head.
///
/// `logit(m, n) = t(layer, m) * dot(rope(q_m, m), rope(k_n, n)) / sqrt(d)`
/// for `n <= m`; positions above the diagonal receive exactly zero
/// probability. Returns the attended output rows and the requested trace.
#[allow(clippy::too_many_arguments)]
pub fn attend<T: Real>(
    q: ArrayView2<'_, T>,
    k: ArrayView2<'_, T>,
    v: ArrayView2<'_, T>,
    layer: usize,
    rope_config: &RopeConfig<T>,
    spectrum: &FrequencySpectrum<T>,
    policy: &ScalingPolicy<T>,
    mode: TraceMode,
) -> Result<(Array2<T>, AttentionTrace<T>), AttentionError> {
    if q.dim() != k.dim() || q.nrows() != v.nrows() {
        return Err(AttentionError::ShapeMismatch {
            q: q.dim(),
            k: k.dim(),
            v: v.dim(),
        });
    }
    if q.ncols() != rope_config.d {
        return Err(AttentionError::HeadDimMismatch {
            got: q.ncols(),
            expected: rope_config.d,
        });
    }
    if q.iter().chain(k.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(AttentionError::NonFinite);
    }

    let n = q.nrows();
    let d = rope_config.d;
    let mut q_rot = Array2::zeros((n, d));
    let mut k_rot = Array2::zeros((n, d));
    for m in 0..n {
        let qr = rope::apply_rope(q.row(m).as_slice().unwrap(), m, rope_config, spectrum)?;
        let kr = rope::apply_rope(k.row(m).as_slice().unwrap(), m, rope_config, spectrum)?;
        q_rot.row_mut(m).assign(&ndarray::ArrayView1::from(&qr));
        k_rot.row_mut(m).assign(&ndarray::ArrayView1::from(&kr));
    }

    let inv_sqrt_d = T::one() / T::from_usize_lossy(d).sqrt();
    let scores = q_rot.dot(&k_rot.t());

    let mut probs = Array2::zeros((n, n));
    let mut entropies = if mode == TraceMode::Off {
        Vec::new()
    } else {
        Vec::with_capacity(n)
    };
    for m in 0..n {
        let t = policy.logit_scale(layer, m);
        let score_row = scores.row(m);
        let mut max = T::neg_infinity();
        for j in 0..=m {
            max = max.max(t * score_row[j] * inv_sqrt_d);
        }
        let mut total = T::zero();
        let mut weighted = T::zero();
        {
            let mut prob_row = probs.row_mut(m);
            for j in 0..=m {
                let shifted = t * score_row[j] * inv_sqrt_d - max;
                let e = shifted.exp();
                total += e;
                weighted += e * shifted;
                prob_row[j] = e;
            }
            let inv_total = T::one() / total;
            for j in 0..=m {
                prob_row[j] = prob_row[j] * inv_total;
            }
        }
        if mode != TraceMode::Off {
            // H = ln Z - sum(e_i * z_i) / Z over the shifted logits; equal to
            // -sum p ln p without a logarithm per element.
            entropies.push((total.ln() - weighted / total).max(T::zero()));
        }
    }

    let output = probs.dot(&v);
    let trace = AttentionTrace {
        probs: if mode == TraceMode::Full {
            Some(probs)
        } else {
            None
        },
        entropy: entropies,
    };
    Ok((output, trace))
}
