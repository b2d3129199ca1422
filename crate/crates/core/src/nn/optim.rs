use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamHyper {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One Adam update with bias correction. Clipping by global norm is
    /// applied to the gradients before the moment updates.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients, hyper: &AdamHyper) -> Result<StepInfo> {
        for (name, g) in grads.iter() {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Tensor {
                    tensor: name.clone(),
                    message: format!("non-finite gradient at element {i}"),
                });
            }
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Tensor {
                    tensor: name.clone(),
                    message: format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
        }
        let grad_norm = grads.global_norm();
        let clip_scale = match hyper.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let p: &mut Tensor = params.get_mut(&name).expect("checked above");
            let n = p.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] * clip_scale;
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *pv -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
            }
        }
        Ok(StepInfo { grad_norm, clip_scale })
    }
}
