//! Position-encoding laboratory: rotary embeddings and their context-window
//! extension variants under one parameterization, attention-logit scaling
//! policies, and attention-entropy profiling on a deterministic desk-scale
//! decoder-only transformer.

pub mod attention;
pub mod config;
pub mod model;
pub mod profiler;
pub mod rope;
pub mod scaling;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Scalar type the kernels are generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + AddAssign
    + Sum
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Tolerance for checking that a probability row sums to one.
    fn normalization_tolerance() -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize conversion")
    }
}

impl Real for f64 {
    fn normalization_tolerance() -> Self {
        1e-9
    }
}

impl Real for f32 {
    fn normalization_tolerance() -> Self {
        1e-4
    }
}

// Concrete aliases for the default 64-bit pipeline.
pub type RopeConfig64 = rope::RopeConfig<f64>;
pub type FrequencySpectrum64 = rope::FrequencySpectrum<f64>;
pub type ScalingPolicy64 = scaling::ScalingPolicy<f64>;
pub type AttentionTrace64 = attention::AttentionTrace<f64>;
pub type ModelWeights64 = model::ModelWeights<f64>;
pub type EntropyReport64 = profiler::EntropyReport<f64>;
