//! Adam optimizer operating on a [`ParamStore`].

use crate::error::{Result, StradiffError};
use crate::tape::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update over every parameter, with bias-corrected moments.
///
/// Rejects non-finite gradients before touching any state, so a failed step
/// leaves the store unchanged.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    assert_eq!(grads.per_param.len(), store.len(), "gradient count mismatch");
    for pid in 0..store.len() {
        if !grads.per_param[pid].is_finite() {
            return Err(StradiffError::NumericalFault {
                context: format!("non-finite gradient for parameter {}", store.name(pid)),
            });
        }
    }

    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for pid in 0..store.len() {
        let g = &grads.per_param[pid];
        for i in 0..g.len() {
            let gi = g.data[i];
            let m = &mut store.m[pid].data[i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            let v = &mut store.v[pid].data[i];
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            let mhat = store.m[pid].data[i] / bc1;
            let vhat = store.v[pid].data[i] / bc2;
            store.get_mut(pid).data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
