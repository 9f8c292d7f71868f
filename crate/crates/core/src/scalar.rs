//! Floating point abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar used by the dynamics, geometry and QP code: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for the finite literals used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Infinity norm of a slice; zero for an empty slice.
pub fn norm_inf<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}
