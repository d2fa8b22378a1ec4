//! Scalar abstraction so the numeric core works with `f32` or `f64`.

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar: `f32` or `f64`.
///
/// All tolerances quoted elsewhere in the crate (bisection accuracy,
/// residual thresholds) are attainable with `f64`; with `f32` the solvers
/// stop at the machine-precision floor instead.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Convert an `f64` constant into the scalar type.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant must be representable")
    }

    /// `0.5 * log2(x)`, the recurring rate expression.
    fn half_log2(self) -> Self {
        self.log2() * Self::cast(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}
