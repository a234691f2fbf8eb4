//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::{Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// One AdamW update of `params` in place. `step` counts from 1.
///
/// The decay `p ← p − lr·wd·p` is applied first, then the bias-corrected
/// moment step `p ← p − lr·m̂/(√v̂ + ε)`.
#[allow(clippy::too_many_arguments)]
pub fn optimizer_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    weight_decay: f64,
    hp: &AdamWParams,
) -> Result<()> {
    ensure!(
        params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len(),
        Input,
        "optimizer buffers disagree in length"
    );
    ensure!(step >= 1, Input, "optimizer step counts from 1");
    ensure!(grads.iter().all(|g| g.is_finite()), Numeric, "non-finite gradient");
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let one = T::one();
    let bc1 = T::lit(1.0 - hp.beta1.powi(step.min(i32::MAX as u64) as i32));
    let bc2 = T::lit(1.0 - hp.beta2.powi(step.min(i32::MAX as u64) as i32));
    let lr_t = T::lit(lr);
    let decay = one - T::lit(lr * weight_decay);
    let eps = T::lit(hp.eps);
    for i in 0..params.len() {
        let g = grads[i];
        let mut p = params[i] * decay;
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p -= lr_t * m_hat / (v_hat.sqrt() + eps);
        params[i] = p;
    }
    Ok(())
}
