use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::argument(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// One bias-corrected Adam update using the gradient buffers in `params`.
///
/// Gradients are checked before anything is modified, so a divergence error
/// leaves parameters and moments untouched.
pub fn adam_step(params: &mut ParamStore, config: &AdamConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Divergence { tensor: p.name.clone() });
    }
    params.adam_step += 1;
    let t = params.adam_step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for p in params.iter_mut() {
        let g = p.grad.as_slice();
        let m = p.first_moment.as_mut_slice();
        let v = p.second_moment.as_mut_slice();
        let theta = p.value.as_mut_slice();
        for i in 0..g.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            theta[i] -= config.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + config.eps);
        }
    }
    Ok(())
}
