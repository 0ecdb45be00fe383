//! Finite-difference gradient checking.
//!
//! This is the independent oracle used throughout the test suites: it never
//! touches the reverse-mode machinery, only repeated forward evaluations.

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `x0`:
/// `g_i = (f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_difference<F>(mut f: F, x0: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest relative disagreement between two gradient vectors, where the
/// per-component error is `|a − b| / max(1, |a|, |b|)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}
