//! Real scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, NumAssign};

/// Floating point element type for tensors, parameters and scores.
///
/// Implemented for `f32` and `f64`. Everything that participates in
/// gradient checks runs in `f64`.
pub trait Scalar:
    Float + NumAssign + Sum + FromStr + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Little-endian bytes of the value widened to `f64`.
    fn to_le_f64_bytes(self) -> [u8; 8] {
        self.as_f64().to_le_bytes()
    }
}

macro_rules! impl_scalar {
    ($($t:ty)*) => ($(
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*)
}

impl_scalar!(f32 f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trips_through_f64() {
        let x = 0.1f32;
        assert_eq!(f32::of(x.as_f64()), x);
    }
}
