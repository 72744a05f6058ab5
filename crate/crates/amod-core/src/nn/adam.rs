//! Named parameters with persistent Adam state.

use crate::mat::Mat;

/// Default fixed learning rate for training.
pub const DEFAULT_LR: f64 = 0.003;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Mat,
    /// First moment.
    pub m: Mat,
    /// Second moment.
    pub v: Mat,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Mat) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            m: Mat::zeros(r, c),
            v: Mat::zeros(r, c),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(param: &mut Parameter, grad: &Mat, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    assert_eq!(param.value.shape(), grad.shape(), "gradient shape mismatch");
    param.step += 1;
    let bc1 = 1.0 - beta1.powi(param.step as i32);
    let bc2 = 1.0 - beta2.powi(param.step as i32);
    let n = param.value.data().len();
    for i in 0..n {
        let g = grad.data()[i];
        let m = beta1 * param.m.data()[i] + (1.0 - beta1) * g;
        let v = beta2 * param.v.data()[i] + (1.0 - beta2) * g * g;
        param.m.data_mut()[i] = m;
        param.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        param.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
