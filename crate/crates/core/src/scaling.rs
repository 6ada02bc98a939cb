//! Attention-logit scaling policies.
//!
//! A policy maps `(layer index, query position)` to a multiplier `t` applied
//! to that query's logit row before the softmax. Scaling with `t > 1`
//! sharpens the attention distribution and lowers its entropy.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("logarithm base requires pretrained context window > 1, got {0}")]
    DegenerateContext(usize),
    #[error("constant scale must be positive, got {0}")]
    NonPositiveConstant(f64),
    #[error("training length must be >= 2 for a log-n scale, got {0}")]
    DegenerateTrainLength(usize),
}

/// How attention logits are scaled before the softmax.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalingPolicy<T: Real> {
    /// No scaling; `t = 1` everywhere.
    None,
    /// Fixed multiplier for every layer and position.
    Constant(T),
    /// Position- and layer-independent `t = 0.1 ln(s) + 1` for a context
    /// scaling factor `s`.
    Yarn { s: T },
    /// `t = ln(n_train)`, with `n_train` the longest training sequence.
    ChiangLogN { n_train: usize },
    /// `t = log_c(i)` with `i = position + 1` contextual tokens, floored at
    /// 1e-6 to stay positive at `i = 1`.
    ReRope { c: usize },
    /// `t = max(log_c(i), 1)` with `i = position + 1`, except on exempt
    /// layers where `t = 1`. Inert inside the pretrained window.
    EntropyAware {
        c: usize,
        exempt_layers: BTreeSet<usize>,
    },
}

impl<T: Real> ScalingPolicy<T> {
    /// Entropy-aware policy with the default first-two-layers exemption.
    pub fn entropy_aware(c: usize) -> Self {
        ScalingPolicy::EntropyAware {
            c,
            exempt_layers: BTreeSet::from([0, 1]),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            ScalingPolicy::None | ScalingPolicy::Yarn { .. } => Ok(()),
            ScalingPolicy::Constant(v) => {
                if *v <= T::zero() {
                    Err(PolicyError::NonPositiveConstant(
                        v.to_f64().unwrap_or(f64::NAN),
                    ))
                } else {
                    Ok(())
                }
            }
            ScalingPolicy::ChiangLogN { n_train } => {
                if *n_train < 2 {
                    Err(PolicyError::DegenerateTrainLength(*n_train))
                } else {
                    Ok(())
                }
            }
            ScalingPolicy::ReRope { c } | ScalingPolicy::EntropyAware { c, .. } => {
                if *c <= 1 {
                    Err(PolicyError::DegenerateContext(*c))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Multiplier for the logit row of query `position` on `layer`.
    pub fn logit_scale(&self, layer: usize, position: usize) -> T {
        match self {
            ScalingPolicy::None => T::one(),
            ScalingPolicy::Constant(v) => *v,
            ScalingPolicy::Yarn { s } => T::from_f64_lossy(0.1) * s.ln() + T::one(),
            ScalingPolicy::ChiangLogN { n_train } => T::from_usize_lossy(*n_train).ln(),
            ScalingPolicy::ReRope { c } => {
                let i = T::from_usize_lossy(position + 1);
                let t = i.ln() / T::from_usize_lossy(*c).ln();
                t.max(T::from_f64_lossy(1e-6))
            }
            ScalingPolicy::EntropyAware { c, exempt_layers } => {
                if exempt_layers.contains(&layer) {
                    return T::one();
                }
                let i = T::from_usize_lossy(position + 1);
                let t = i.ln() / T::from_usize_lossy(*c).ln();
                t.max(T::one())
            }
        }
    }
}

impl<T: Real> fmt::Display for ScalingPolicy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingPolicy::None => f.write_str("none"),
            ScalingPolicy::Constant(v) => write!(f, "constant({v})"),
            ScalingPolicy::Yarn { s } => write!(f, "yarn(s={s})"),
            ScalingPolicy::ChiangLogN { n_train } => write!(f, "chiang-log-n(n={n_train})"),
            ScalingPolicy::ReRope { c } => write!(f, "rerope(c={c})"),
            ScalingPolicy::EntropyAware { c, .. } => write!(f, "entropy-aware(c={c})"),
        }
    }
}
