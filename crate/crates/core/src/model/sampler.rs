use rand::Rng;

use crate::autodiff::Tensor;

/// Map a uniform draw to a standard Gumbel variate, clamping away the
/// endpoints where the double logarithm blows up.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// Tensor of i.i.d. Gumbel(0, 1) noise.
pub fn sample_gumbel<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| gumbel_from_uniform(rng.gen::<f64>())).collect();
    Tensor::new(rows, cols, data)
}

/// One binary selector draw for a candidate edge.
#[derive(Clone, Copy, Debug)]
pub struct SelectorSample {
    /// Keep probability pi_1 (the edge's context dependency score).
    pub pi1: f64,
    pub g1: f64,
    pub g0: f64,
    /// Relaxed keep probability in (0, 1).
    pub p_hat: f64,
    /// Hard selector: `p_hat >= threshold`.
    pub hard: bool,
}

/// Reference scalar implementation of the binary Gumbel-softmax
/// selector. The tape-based forward pass computes the same quantity
/// through a two-column row-softmax; tests cross-check the two routes.
///
/// In training mode `g1, g0` are sampled i.i.d. Gumbel(0, 1); in eval
/// mode they are zero, making the structure deterministic.
pub fn selector_sample<R: Rng>(
    pi1: f64,
    tau: f64,
    threshold: f64,
    training: bool,
    rng: &mut R,
) -> SelectorSample {
    assert!(tau > 0.0, "tau must be positive");
    let (g1, g0) = if training {
        (gumbel_from_uniform(rng.gen::<f64>()), gumbel_from_uniform(rng.gen::<f64>()))
    } else {
        (0.0, 0.0)
    };
    let pi1c = pi1.clamp(1e-12, 1.0 - 1e-12);
    let a1 = (pi1c.ln() + g1) / tau;
    let a0 = ((1.0 - pi1c).ln() + g0) / tau;
    let m = a1.max(a0);
    let e1 = (a1 - m).exp();
    let e0 = (a0 - m).exp();
    let p_hat = e1 / (e1 + e0);
    SelectorSample { pi1, g1, g0, p_hat, hard: p_hat >= threshold }
}
