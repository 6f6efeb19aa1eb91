use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place; `t` is the 1-based
/// step count used for bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("Adam step count starts at 1".into()));
    }
    let n = params.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(Error::dims(
            n,
            format!("grads {} / moments {}", grads.len(), moments.m.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Invariant(format!(
            "non-finite gradient {} at parameter {i}",
            grads[i]
        )));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for i in 0..n {
        let g = grads[i];
        let m = b1 * moments.m[i] + (1.0 - b1) * g;
        let v = b2 * moments.v[i] + (1.0 - b2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}
