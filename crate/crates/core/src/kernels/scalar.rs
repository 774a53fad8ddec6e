use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use super::{Backend, Kernels, Precision};
use crate::simgroup::Reducible;

/// Floating-point element types the kernels are instantiated for.
pub trait Real: Float + Default + Debug + Display + Sum + Reducible + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Bit pattern widened to 64 bits, for bitwise comparisons.
    fn to_bits_u64(self) -> u64;

    /// Distance to the next representable value away from zero.
    fn ulp(self) -> Self;

    /// The precision-specific kernel table of a backend.
    fn kernels(backend: &dyn Backend) -> &dyn Kernels<Self>;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }

    fn ulp(self) -> Self {
        let a = self.abs();
        if !a.is_finite() {
            return f32::NAN;
        }
        if a == f32::MAX {
            return a - f32::from_bits(a.to_bits() - 1);
        }
        f32::from_bits(a.to_bits() + 1) - a
    }

    fn kernels(backend: &dyn Backend) -> &dyn Kernels<f32> {
        backend
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }

    fn ulp(self) -> Self {
        let a = self.abs();
        if !a.is_finite() {
            return f64::NAN;
        }
        if a == f64::MAX {
            return a - f64::from_bits(a.to_bits() - 1);
        }
        f64::from_bits(a.to_bits() + 1) - a
    }

    fn kernels(backend: &dyn Backend) -> &dyn Kernels<f64> {
        backend
    }
}

/// Difference between `a` and `b` in units of the last place of
/// `max(|a|, |b|, scale)`.
///
/// `scale` lets accumulated results be judged against the magnitude of their
/// summands (`Σ|terms|`) instead of a possibly cancelled result; pass zero for
/// elementwise results.
pub fn ulp_distance<T: Real>(a: T, b: T, scale: T) -> f64 {
    if a.to_bits_u64() == b.to_bits_u64() {
        return 0.0;
    }
    if a.is_nan() || b.is_nan() {
        return f64::INFINITY;
    }
    let reference = a.abs().max(b.abs()).max(scale.abs());
    let unit = reference.ulp().to_f64();
    (a.to_f64() - b.to_f64()).abs() / unit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ulp_of_one() {
        assert_eq!(1.0f64.ulp(), f64::EPSILON);
        assert_eq!(1.0f32.ulp(), f32::EPSILON);
        assert_eq!(0.0f64.ulp(), f64::from_bits(1));
    }

    #[test]
    fn distance_counts_steps() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 3);
        assert_eq!(ulp_distance(a, b, 0.0), 3.0);
        assert_eq!(ulp_distance(2.5f32, 2.5f32, 0.0), 0.0);
        // against a larger scale the same gap is a fraction of an ulp
        assert!(ulp_distance(a, b, 8.0) < 1.0);
        assert!(ulp_distance(f64::NAN, 1.0, 0.0).is_infinite());
    }
}
