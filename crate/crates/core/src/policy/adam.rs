use serde::{Deserialize, Serialize};

use super::PolicyError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64, max_grad_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm,
        }
    }
}

/// Adam with bias correction; moment buffers grow with the parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Norm of the gradient actually fed to Adam (after clipping).
    pub clipped_norm: f64,
    /// Norm of the parameter change.
    pub update_norm: f64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grad` is clipped in place.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64]) -> Result<StepStats, PolicyError> {
        grad_step(params, grad, self)
    }
}

/// Clips `grad` to the configured global norm, then applies one Adam step to `params`.
///
/// A non-finite gradient entry aborts before anything is modified.
pub fn grad_step(
    params: &mut [f64],
    grad: &mut [f64],
    opt: &mut Adam,
) -> Result<StepStats, PolicyError> {
    if params.len() != grad.len() {
        return Err(PolicyError::Dimension {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(PolicyError::Numerical { index });
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut clipped_norm = grad_norm;
    if let Some(max) = opt.cfg.max_grad_norm {
        if grad_norm > max {
            let s = max / (grad_norm + 1e-6);
            for g in grad.iter_mut() {
                *g *= s;
            }
            clipped_norm = grad_norm * s;
        }
    }
    opt.m.resize(params.len(), 0.0);
    opt.v.resize(params.len(), 0.0);
    opt.t += 1;
    let c = &opt.cfg;
    let bc1 = 1.0 - c.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - c.beta2.powi(opt.t as i32);
    let mut upd = 0.0;
    for i in 0..params.len() {
        let g = grad[i];
        opt.m[i] = c.beta1 * opt.m[i] + (1.0 - c.beta1) * g;
        opt.v[i] = c.beta2 * opt.v[i] + (1.0 - c.beta2) * g * g;
        let d = c.lr * (opt.m[i] / bc1) / ((opt.v[i] / bc2).sqrt() + c.eps);
        params[i] -= d;
        upd += d * d;
    }
    Ok(StepStats {
        grad_norm,
        clipped_norm,
        update_norm: upd.sqrt(),
    })
}
