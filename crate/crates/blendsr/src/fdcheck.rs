//! Central finite-difference gradient checking, shared by the unit tests.

/// Compares an analytic gradient against central differences of `eval` at
/// `theta0`. `eval` receives a full candidate parameter vector and returns
/// the scalar objective.
///
/// The error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-2):
/// pure relative error for gradients of ordinary magnitude, with a floor so
/// that near-zero components are compared absolutely instead of amplifying
/// finite-difference noise.
pub fn assert_grad_matches_fd(eval: &mut dyn FnMut(&[f64]) -> f64, theta0: &[f64], analytic: &[f64], h: f64, tol: f64, label: &str) {
    assert_eq!(theta0.len(), analytic.len(), "{label}: gradient length mismatch");
    let mut theta = theta0.to_vec();
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + h;
        let plus = eval(&theta);
        theta[i] = saved - h;
        let minus = eval(&theta);
        theta[i] = saved;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-2);
        let err = (analytic[i] - numeric).abs() / denom;
        assert!(
            err < tol,
            "{label}: component {i}: analytic {} vs fd {} (err {err:.3e} >= {tol:.1e})",
            analytic[i],
            numeric
        );
    }
}
