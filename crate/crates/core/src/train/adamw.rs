//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.entries().iter().map(|e| vec![T::zero(); e.tensor.numel()]).collect();
        OptimizerState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One update. Parameters without a gradient are left untouched.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer state has {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        if let Some(g) = grads.param(id) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: params.entry(id).name.clone(),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step_size = T::of(cfg.lr / bc1);
    let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
    let eps = T::of(cfg.eps);
    for id in params.ids() {
        let Some(g) = grads.param(id) else { continue };
        let decay = if params.entry(id).decay {
            T::of(1.0 - cfg.lr * cfg.weight_decay)
        } else {
            T::one()
        };
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = params.get_mut(id).data_mut();
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: vec![g.len()],
                rhs: vec![p.len()],
            });
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + c1 * g[i];
            v[i] = b2 * v[i] + c2 * g[i] * g[i];
            p[i] = p[i] * decay - step_size * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}
