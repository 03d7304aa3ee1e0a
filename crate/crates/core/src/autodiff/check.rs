//! Finite-difference utilities for verifying analytic gradients.

/// Central difference of `f` at `x` along coordinate `i` with step `h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let fp = f(&probe);
    probe[i] = x[i] - h;
    let fm = f(&probe);
    (fp - fm) / (2.0 * h)
}

/// Agreement test for a gradient pair: |a - n| <= floor + tol * max(|a|, |n|).
/// The absolute term covers near-zero gradients, where central differences
/// carry roundoff of order |f| * eps / h and relative error is meaningless.
pub fn grad_close(analytic: f64, numeric: f64, tol: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= floor + tol * analytic.abs().max(numeric.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_square() {
        let d = central_difference(|x| x[0] * x[0], &[3.0], 0, 1e-5);
        assert!((d - 6.0).abs() < 1e-9);
    }

    #[test]
    fn grad_close_handles_zero_noise() {
        assert!(grad_close(0.0, 3e-8, 1e-4, 1e-7));
        assert!(!grad_close(1.0, 1.1, 1e-4, 1e-7));
        assert!(grad_close(2.0, 2.0 + 1e-5, 1e-4, 1e-7));
    }
}
