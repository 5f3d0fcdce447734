//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does linear algebra is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Complex matrices are built on
//! [`nalgebra::Complex`] over the same scalar.

use nalgebra::{Complex, DMatrix, RealField};
use num_traits::ToPrimitive;

/// Real floating point type usable by the solvers: `f32` or `f64`.
pub trait Scalar: RealField + Copy + ToPrimitive + Default + 'static {
    /// Lossy conversion from an `f64` literal or config value.
    fn of(x: f64) -> Self;

    /// Widening conversion used for logging, IO and comparisons against
    /// config thresholds.
    fn to64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}

/// Complex scalar over `T`.
pub type C<T> = Complex<T>;

/// Dynamically sized complex matrix.
pub type CMat<T> = DMatrix<Complex<T>>;

/// Squared Frobenius norm, i.e. `trace(M Mᴴ)`.
pub fn frob2<T: Scalar>(m: &CMat<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

pub(crate) fn all_finite<T: Scalar>(m: &CMat<T>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
