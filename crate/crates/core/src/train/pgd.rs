use rand::Rng;

use super::config::{PgdConfig, PgdInit};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::model::ModelParams;
use crate::objective::l_adv;

/// The adversarial loss as a function of the first-layer perturbation, with
/// model parameters and both views' invariant embeddings held fixed.
pub struct AdvObjective<'a> {
    batch: &'a GraphBatch,
    params: &'a ModelParams,
    hidden1: Tensor,
    z1_inv: &'a Tensor,
    z2_inv: &'a Tensor,
    temperature: f64,
}

impl<'a> AdvObjective<'a> {
    pub fn new(
        batch: &'a GraphBatch,
        params: &'a ModelParams,
        z1_inv: &'a Tensor,
        z2_inv: &'a Tensor,
        temperature: f64,
    ) -> Result<Self> {
        let expected = [batch.num_graphs, params.config.embed_dim];
        for z in [z1_inv, z2_inv] {
            if z.shape() != expected {
                return Err(Error::ShapeMismatch {
                    op: "pgd_maximize",
                    left: expected.to_vec(),
                    right: z.shape().to_vec(),
                });
            }
        }
        let mut tape = Tape::new();
        let model = params.bind(&mut tape);
        let h1 = model.hidden1(&mut tape, batch)?;
        Ok(Self {
            batch,
            params,
            hidden1: tape.value(h1).clone(),
            z1_inv,
            z2_inv,
            temperature,
        })
    }

    pub fn delta_shape(&self) -> &[usize] {
        self.hidden1.shape()
    }

    /// Loss at `delta` and its gradient with respect to `delta`.
    pub fn eval(&self, delta: &Tensor) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let model = self.params.bind(&mut tape);
        let h1 = tape.leaf(self.hidden1.clone());
        let d = tape.leaf(delta.clone());
        let h = tape.add(h1, d)?;
        let z = model.encode_from_hidden1(&mut tape, self.batch, h)?;
        let z_adv = model.extract_inv(&mut tape, z)?;
        let z1 = tape.leaf(self.z1_inv.clone());
        let z2 = tape.leaf(self.z2_inv.clone());
        let loss = l_adv(&mut tape, z1, z2, z_adv, self.temperature)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item()?, grads.wrt(d)?))
    }
}

#[derive(Clone, Debug)]
pub struct PgdOutcome {
    pub delta: Tensor,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `max |delta|` after each iteration.
    pub linf_trace: Vec<f64>,
}

fn clamp(x: f64, eps: f64) -> f64 {
    x.max(-eps).min(eps)
}

/// Signed-gradient ascent on the adversarial loss, projected onto the
/// l-infinity ball of radius `cfg.epsilon` after every step.
pub fn pgd_maximize<R: Rng + ?Sized>(
    batch: &GraphBatch,
    params: &ModelParams,
    z1_inv: &Tensor,
    z2_inv: &Tensor,
    temperature: f64,
    cfg: &PgdConfig,
    rng: &mut R,
) -> Result<PgdOutcome> {
    cfg.validate()?;
    let objective = AdvObjective::new(batch, params, z1_inv, z2_inv, temperature)?;
    let eps = cfg.epsilon;
    let shape = objective.delta_shape().to_vec();
    let mut delta = match cfg.init {
        PgdInit::Zero => Tensor::zeros(&shape),
        PgdInit::Uniform if eps > 0.0 => {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), (0..n).map(|_| rng.gen_range(-eps..=eps)).collect())?
        }
        PgdInit::Uniform => Tensor::zeros(&shape),
    };
    let step = cfg.effective_step_size();

    let (initial_loss, mut grad) = objective.eval(&delta)?;
    let mut final_loss = initial_loss;
    let mut linf_trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        for (d, g) in delta.data_mut().iter_mut().zip(grad.data()) {
            let s = if *g > 0.0 {
                1.0
            } else if *g < 0.0 {
                -1.0
            } else {
                0.0
            };
            *d = clamp(*d + step * s, eps);
        }
        linf_trace.push(delta.max_abs());
        (final_loss, grad) = objective.eval(&delta)?;
    }
    Ok(PgdOutcome {
        delta,
        initial_loss,
        final_loss,
        linf_trace,
    })
}
