use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
    /// Updates applied to this tensor, for bias correction.
    t: u64,
}

/// Adam with per-tensor step counts, so a tensor that sits out a step (masked)
/// keeps its bias correction consistent.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_for(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |m| m.t)
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        param.expect_same_shape(grad)?;
        if !grad.all_finite() {
            return Err(Error::NumericDomain(format!("gradient of {name} is not finite")));
        }
        let c = self.config;
        let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: Tensor::zeros(grad.shape()),
            v: Tensor::zeros(grad.shape()),
            t: 0,
        });
        st.t += 1;
        let bc1 = 1.0 - c.beta1.powi(st.t as i32);
        let bc2 = 1.0 - c.beta2.powi(st.t as i32);
        let (m, v) = (st.m.data_mut(), st.v.data_mut());
        for (((p, g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= lr * mhat / (vhat.sqrt() + c.eps);
        }
        Ok(())
    }
}
