//! Scalar abstraction for the numerical kernels.
//!
//! All core math is generic over [`Real`], which combines the matrix-algebra
//! requirements of `nalgebra` with the elementary-function surface of
//! `num_traits::Float`. `f64` is the working precision throughout the test
//! and acceptance suites; `f32` instantiations compile and run at reduced
//! tolerances.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable in every kernel of this crate.
pub trait Real: nalgebra::RealField + Float + FromPrimitive + Default {}

impl<T> Real for T where T: nalgebra::RealField + Float + FromPrimitive + Default {}

/// Shorthand conversion from an `f64` literal or count.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 must convert into the scalar type")
}

/// `usize` to scalar, used for quadrature weights and grid indices.
#[inline]
pub fn cast_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("usize must convert into the scalar type")
}

// `Float` and `RealField` both provide these names, so method syntax on a
// generic scalar is ambiguous. The free functions below pick one side once.

#[inline]
pub fn powf<T: Real>(x: T, e: T) -> T {
    Float::powf(x, e)
}

#[inline]
pub fn powi<T: Real>(x: T, e: i32) -> T {
    Float::powi(x, e)
}

#[inline]
pub fn abs<T: Real>(x: T) -> T {
    Float::abs(x)
}

#[inline]
pub fn sqrt<T: Real>(x: T) -> T {
    Float::sqrt(x)
}

#[inline]
pub fn exp<T: Real>(x: T) -> T {
    Float::exp(x)
}

#[inline]
pub fn ln<T: Real>(x: T) -> T {
    Float::ln(x)
}

#[inline]
pub fn log10<T: Real>(x: T) -> T {
    Float::log10(x)
}

#[inline]
pub fn fmax<T: Real>(a: T, b: T) -> T {
    Float::max(a, b)
}

#[inline]
pub fn fmin<T: Real>(a: T, b: T) -> T {
    Float::min(a, b)
}

#[inline]
pub fn hypot_slice<T: Real>(xs: &[T]) -> T {
    let mut s = T::zero();
    for &x in xs {
        s = s + x * x;
    }
    sqrt(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casts_round_trip() {
        let x: f64 = cast::<f64>(0.25);
        assert_eq!(x, 0.25);
        let y: f32 = cast::<f32>(0.5);
        assert_eq!(y, 0.5f32);
        assert_eq!(cast_usize::<f64>(7), 7.0);
    }

    #[test]
    fn helpers_match_std() {
        assert_eq!(powf(2.0f64, 10.0), 1024.0);
        assert_eq!(fmax(1.0f64, 2.0), 2.0);
        assert_eq!(abs(-3.5f64), 3.5);
    }
}
