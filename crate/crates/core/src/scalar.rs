//! Floating-point scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: f32 or f64.
///
/// The solver tolerances depend on the precision of the type, so every
/// scalar advertises the accuracy the interior-point iteration should aim
/// for. The certificate thresholds checked by [`crate::qp::kkt_residuals`]
/// are looser than these targets.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Target for scaled primal infeasibility at termination.
    fn primal_tolerance() -> Self;
    /// Target for the stationarity residual at termination.
    fn dual_tolerance() -> Self;
    /// Target for the largest slack-dual product at termination.
    fn complementarity_tolerance() -> Self;

    /// Lossy conversion from `f64`, used for literals.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn primal_tolerance() -> Self {
        1e-11
    }
    fn dual_tolerance() -> Self {
        1e-10
    }
    fn complementarity_tolerance() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn primal_tolerance() -> Self {
        2e-5
    }
    fn dual_tolerance() -> Self {
        1e-4
    }
    fn complementarity_tolerance() -> Self {
        1e-5
    }
}
