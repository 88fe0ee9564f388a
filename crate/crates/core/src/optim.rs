use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
    /// Number of updates this parameter has received.
    pub t: u64,
}

/// Adam with named, per-parameter state so that the full optimizer state can
/// be checkpointed and resumed exactly. Parameters without a gradient in a
/// step are left untouched, including their step count.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    slots: BTreeMap<String, AdamSlot>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            slots: BTreeMap::new(),
        }
    }

    pub fn slots(&self) -> &BTreeMap<String, AdamSlot> {
        &self.slots
    }

    pub fn restore(&mut self, slots: BTreeMap<String, AdamSlot>) {
        self.slots = slots;
    }

    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients can carry op history; keep the moments graph-free
            let g = &g.detach();
            let slot = match self.slots.remove(name) {
                Some(s) => s,
                None => AdamSlot {
                    m: g.zeros_like()?,
                    v: g.zeros_like()?,
                    t: 0,
                },
            };
            let t = slot.t + 1;
            let m = ((slot.m * self.beta1)? + (g * (1.0 - self.beta1))?)?.detach();
            let v = ((slot.v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let m_hat = (&m / (1.0 - self.beta1.powi(t as i32)))?;
            let v_hat = (&v / (1.0 - self.beta2.powi(t as i32)))?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.slots.insert(name.clone(), AdamSlot { m, v, t });
        }
        Ok(())
    }
}
