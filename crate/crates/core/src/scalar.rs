//! Real scalar abstraction shared by the polynomial algebra, the Lie flows and
//! the normal-form driver.
//!
//! Two implementations are provided: `f64` for production runs and
//! [`qd::Quad`] (double-double, about 31 significant digits) for audits whose
//! signal sits far below `f64` round-off.

use std::fmt::Debug;
use std::ops::Neg;

use num_complex::Complex;
use num_traits::Num;

pub use qd::Quad;

pub trait Real:
    Copy + Send + Sync + Debug + PartialOrd + Num + Neg<Output = Self> + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn pi() -> Self;
    fn is_finite(self) -> bool;

    fn from_i64(x: i64) -> Self {
        Self::from_f64(x as f64)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn pi() -> Self {
        std::f64::consts::PI
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Real for Quad {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Quad::from_f64(x)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    #[inline]
    fn abs(self) -> Self {
        Quad::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }
    fn pi() -> Self {
        Quad::PI
    }
    #[inline]
    fn is_finite(self) -> bool {
        Quad::is_finite(self)
    }
}

/// Complex modulus computed without the `Float` bound.
#[inline]
pub fn cabs<T: Real>(z: Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

#[inline]
pub fn cscale<T: Real>(z: Complex<T>, s: T) -> Complex<T> {
    Complex::new(z.re * s, z.im * s)
}

/// Lift an `f64` complex number into `T`.
#[inline]
pub fn clift<T: Real>(z: Complex<f64>) -> Complex<T> {
    Complex::new(T::from_f64(z.re), T::from_f64(z.im))
}

#[inline]
pub fn clower<T: Real>(z: Complex<T>) -> Complex<f64> {
    Complex::new(z.re.to_f64(), z.im.to_f64())
}

/// (2π)^{-d/2} in the working precision.
pub fn torus_normalisation<T: Real>(d: usize) -> T {
    let two_pi = T::pi() + T::pi();
    let mut v = T::one();
    for _ in 0..d {
        v = v * two_pi;
    }
    T::one() / v.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_is_more_precise_than_f64() {
        let third = Quad::from_f64(1.0) / Quad::from_f64(3.0);
        let err = (third * Quad::from_f64(3.0) - Quad::from_f64(1.0)).abs();
        assert!(err.to_f64() < 1e-30);
    }

    #[test]
    fn normalisation_matches_closed_form() {
        for d in 1..=3 {
            let v: f64 = torus_normalisation(d);
            let expect = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
            assert!((v - expect).abs() < 1e-15);
            let q: Quad = torus_normalisation(d);
            assert!((q.to_f64() - expect).abs() < 1e-15);
        }
    }
}
