use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::real::Real;

/// Cosine annealing from `lr0` at step 0 to 0 at `total`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let s = step.min(total) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
}

/// First and second moments plus the number of applied steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One decoupled-weight-decay Adam update at step `state.t + 1`. Rejects
/// non-finite gradients without touching parameters or state.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    h: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract("optimizer state does not match the parameters".into()));
    }
    for (n, (g, p)) in grads.names().iter().zip(grads.tensors().iter().zip(params.tensors())) {
        if g.shape() != p.shape() {
            return Err(Error::shape("adamw", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for `{n}`; step rejected")));
        }
    }
    let t = state.t + 1;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.tensors()[k].data();
        let m = ms[k].data_mut();
        let v = vs[k].data_mut();
        for (i, pi) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i].to_f64();
            let mi = h.beta1 * m[i].to_f64() + (1.0 - h.beta1) * gi;
            let vi = h.beta2 * v[i].to_f64() + (1.0 - h.beta2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            let pv = pi.to_f64();
            *pi = T::from_f64(pv - h.lr * (mhat / (vhat.sqrt() + h.eps) + h.weight_decay * pv));
        }
    }
    state.t = t;
    Ok(())
}
