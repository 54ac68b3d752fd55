//! Resumable Adam.
//!
//! candle's bundled optimizer keeps its moments private, which makes
//! bit-exact resume impossible; this one exposes its state as named tensors
//! so the checkpoint module can persist and restore it.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::VarMap;

use crate::error::{Error, Result};

pub struct Adam {
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    /// Optimizer over every var in the map, in deterministic name order.
    pub fn new(varmap: &VarMap, lr: f64) -> Result<Self> {
        let data = varmap.data().lock().unwrap();
        let mut params: Vec<(String, Var)> =
            data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        drop(data);
        params.sort_by(|a, b| a.0.cmp(&b.0));
        let m = params
            .iter()
            .map(|(_, v)| Tensor::zeros(v.shape(), v.dtype(), v.device()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = params
            .iter()
            .map(|(_, v)| Tensor::zeros(v.shape(), v.dtype(), v.device()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { params, m, v, t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 })
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            self.m[i] = ((&self.m[i] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            self.v[i] = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&self.m[i] / bc1)?;
            let v_hat = (&self.v[i] / bc2)?;
            let update = (m_hat * self.lr)?.div(&(v_hat.sqrt()? + self.eps)?)?;
            var.set(&var.sub(&update)?)?;
        }
        Ok(())
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// State as named tensors ("m::<param>", "v::<param>").
    pub fn state(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.insert(format!("m::{name}"), self.m[i].clone());
            out.insert(format!("v::{name}"), self.v[i].clone());
        }
        out
    }

    /// Restore moments saved by [`Adam::state`].
    pub fn load_state(&mut self, state: &HashMap<String, Tensor>, t: u64) -> Result<()> {
        for (i, (name, _)) in self.params.iter().enumerate() {
            let m = state
                .get(&format!("m::{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {name}")))?;
            let v = state
                .get(&format!("v::{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {name}")))?;
            if m.dims() != self.m[i].dims() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state shape mismatch for {name}: {:?} vs {:?}",
                    m.dims(),
                    self.m[i].dims()
                )));
            }
            self.m[i] = m.clone();
            self.v[i] = v.clone();
        }
        self.t = t;
        Ok(())
    }
}
