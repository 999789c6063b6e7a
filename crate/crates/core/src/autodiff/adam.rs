use super::tensor::Tensor;

/// Adam optimizer state: one first/second moment pair per parameter
/// tensor, plus the shared step counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Fresh state with zero moments matching the parameter shapes and
    /// the standard defaults beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        assert!(lr >= 0.0, "learning rate must be non-negative");
        let m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState { step: 0, m, v, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }
}

/// One Adam update with bias correction, applied in place.
///
/// `params` and `grads` must align with the state's moment tensors in
/// both count and shape; anything else is a caller bug and panics.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "params/state length mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "parameter/gradient shape mismatch");
        assert_eq!(p.shape(), m.shape(), "parameter/state shape mismatch");
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}
