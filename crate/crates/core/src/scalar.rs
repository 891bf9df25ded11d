//! Floating point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64` literals and statistics.
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 is representable in every float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[inline]
pub fn l2_norm<T: Scalar>(u: &[T]) -> T {
    dot(u, u).sqrt()
}

/// Scales `u` in place to unit L2 norm. Returns `false` (and leaves `u`
/// untouched) when the norm is zero or not finite.
pub fn normalize_in_place<T: Scalar>(u: &mut [T]) -> bool {
    let n = l2_norm(u);
    if n == T::zero() || !n.is_finite() {
        return false;
    }
    for x in u.iter_mut() {
        *x = *x / n;
    }
    true
}
