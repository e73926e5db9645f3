use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric core is generic over: f32 or f64.
///
/// The concrete aliases at the crate root pin f64; f32 stays available for
/// callers that want it.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    /// Lift an f64 literal into the scalar type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
