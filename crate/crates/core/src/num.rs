//! Scalar abstraction for the numeric kernels.
//!
//! The softmax, contrastive-combination, and correlation routines are written
//! against [`Real`] so they run at `f32` or `f64`. The pipeline itself uses
//! the [`crate::Scalar`] alias (`f64`).

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the numeric kernels.
pub trait Real: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Lossy conversion from `f64`, for constants and tolerances.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Lossy conversion from `usize` counts.
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("small usize converts to any Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
