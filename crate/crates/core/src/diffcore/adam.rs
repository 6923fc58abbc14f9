use crate::diffcore::params::ParamStore;
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

/// One AdamW update; clears gradients afterwards.
///
/// Fails without touching any weight if a parameter has no gradient or the
/// gradient contains a non-finite value.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} parameters but the store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (name, t) in store.iter() {
        let g = t
            .grad()
            .ok_or_else(|| Error::Numeric(format!("parameter `{name}` has no gradient")))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("gradient of `{name}` is not finite")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, wd, eps) = (state.beta1, state.beta2, state.lr, state.weight_decay, state.eps);
    for ((_, p), (m, v)) in store.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let g = p.grad().expect("checked above").to_vec();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *w -= lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
        }
        p.clear_grad();
    }
    Ok(())
}
