//! Scalar math helpers that work with or without the standard library.

/// `0.5 * ln(2 * pi)`, the constant term of the Gaussian log-density.
pub const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7;

macro_rules! shim {
    ($name:ident, $libm:ident) => {
        #[inline]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$name()
            }
            #[cfg(not(feature = "std"))]
            {
                libm::$libm(x)
            }
        }
    };
}

shim!(exp, exp);
shim!(ln, log);
shim!(ln_1p, log1p);
shim!(sqrt, sqrt);
shim!(sin, sin);
shim!(cos, cos);
shim!(asin, asin);

#[inline]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & (u64::MAX >> 1))
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// Inverse of [`softplus`]: `ln(e^y - 1)` for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    y + ln_1p(-exp(-y))
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Dot product with a fixed four-way accumulation order.
///
/// The summation order is part of the crate's determinism contract, so this
/// must not be swapped for a reassociating implementation.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < chunks {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_form() {
        for &x in &[-30.0f64, -2.0, -0.5, 0.0, 0.5, 2.0, 30.0] {
            let naive = (1.0f64 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn softplus_stable_at_extremes() {
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(softplus(-800.0), 0.0);
    }

    #[test]
    fn softplus_inverse_roundtrips() {
        for &y in &[0.05, 0.3, 1.0, 4.0, 50.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_matches_sequential_sum() {
        let a: alloc::vec::Vec<f64> = (0..13).map(|i| i as f64 * 0.37 - 2.0).collect();
        let b: alloc::vec::Vec<f64> = (0..13).map(|i| 1.5 - i as f64 * 0.21).collect();
        let expected: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - expected).abs() < 1e-12);
    }
}
