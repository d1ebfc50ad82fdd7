use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Floating-point scalar the numeric core is generic over.
///
/// Training runs in `f32`; gradient checks and oracles run in `f64` for the
/// headroom finite differences need.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Conversion from an `f64` constant, rounding to the nearest value.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
