//! Shared helpers for unit tests: central finite differences and the
//! relative-error yardstick used by every gradient check.

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * step));
    }
    grad
}

/// Relative error with an absolute floor: `|n − a| / max(|n| + |a|, 1e-8)`.
pub fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8)
}

/// Assert every component of `analytic` matches central differences of `f`
/// at `x` to relative tolerance `tol`.
pub fn assert_gradient_close(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tol: f64,
) {
    assert_eq!(analytic.len(), x.len(), "gradient length mismatch");
    let numeric = central_diff(f, x, step);
    for (i, (n, a)) in numeric.iter().zip(analytic).enumerate() {
        let err = rel_err(*n, *a);
        assert!(
            err < tol,
            "gradient[{i}]: numeric {n}, analytic {a}, rel err {err} >= {tol} at x = {x:?}"
        );
    }
}
