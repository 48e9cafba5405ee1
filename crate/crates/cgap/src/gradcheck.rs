//! Finite-difference gradient checking.
//!
//! Central differences around each coordinate of a parameter vector, used by
//! the test suites to validate every analytic backward pass. Kept in the
//! library proper so integration tests and downstream experiments can reuse
//! it; it never calls into the backward kernels it is used to check.

use crate::scalar::{from_f64, to_f64, Scalar};

/// Central finite differences: `df/dx_i ~ (f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_diff<S: Scalar>(x: &[S], h: f64, mut f: impl FnMut(&[S]) -> S) -> Vec<f64> {
    let hs: S = from_f64(h);
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + hs;
        let fp = to_f64(f(&probe));
        probe[i] = orig - hs;
        let fm = to_f64(f(&probe));
        probe[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Central differences restricted to the given coordinates.
pub fn central_diff_at<S: Scalar>(
    x: &[S],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[S]) -> S,
) -> Vec<f64> {
    let hs: S = from_f64(h);
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + hs;
            let fp = to_f64(f(&probe));
            probe[i] = orig - hs;
            let fm = to_f64(f(&probe));
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error between an analytic and a numeric gradient coordinate,
/// with a floor so near-zero pairs compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Maximum relative error over a full gradient vector.
pub fn max_rel_err<S: Scalar>(analytic: &[S], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(to_f64(a), n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum x_i^2, df/dx_i = 2 x_i
        let x = [1.0f64, -2.0, 3.0];
        let g = central_diff(&x, 1e-5, |v| v.iter().map(|a| a * a).sum());
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_err_floors_near_zero() {
        assert!(rel_err(0.0, 1e-12) < 1e-3);
        assert!(rel_err(1.0, 2.0) > 0.4);
    }
}
