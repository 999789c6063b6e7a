use super::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative:
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar objective at a given input; any randomness
/// inside it (dropout masks, Gumbel noise) must be held fixed across
/// calls, which seeded evaluation guarantees. `analytic` is the gradient
/// under test, entry-aligned with `x`. Returns the maximum relative
/// error over all entries.
///
/// The estimate is O(eps^2) only where `f` is twice differentiable;
/// callers must keep inputs away from kinks (relu at zero) or expect a
/// large reported error there.
pub fn check_gradient(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    eps: f64,
) -> f64 {
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}
