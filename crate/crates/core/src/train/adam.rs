use std::collections::BTreeMap;

use crate::diff::{GradientMap, Parameters, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &GradientMap,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let shapes: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    if shapes.len() != state.m.len() {
        return Err(Error::invalid("optimizer state does not match parameters"));
    }
    for (name, p) in &shapes {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no gradient for parameter {name}")))?;
        if g.shape() != p.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.clone(),
                right: g.shape().to_vec(),
            });
        }
        if !state.m.get(name).is_some_and(|m| m.shape() == p.as_slice()) {
            return Err(Error::invalid(format!("optimizer state has no slot for {name}")));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, _) in &shapes {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        let p = params.tensor_mut(name).expect("name came from params").data_mut();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
