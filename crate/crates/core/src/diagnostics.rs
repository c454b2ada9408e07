//! Finite-difference verification of every loss term on a small synthetic
//! problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{sample_view_pair, to_view_batch, AugmentationKind, AugmentationSpec};
use crate::diff::{
    finite_diff_check, GradCheckConfig, GradCheckReport, GradientMap, Parameters, Tape, Tensor, Var,
};
use crate::error::Result;
use crate::graph::{to_batch, Graph, GraphBatch};
use crate::model::{init_params, BoundModel, ModelConfig, ModelParams};
use crate::objective::{joint_var, l_adv, l_inv, l_recon, ReconInputs, ReconMode};
use crate::train::{pgd_maximize, PgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Inv,
    Recon,
    Adv,
    Joint,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Inv, LossTerm::Recon, LossTerm::Adv, LossTerm::Joint];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Inv => "l_inv",
            LossTerm::Recon => "l_recon",
            LossTerm::Adv => "l_adv",
            LossTerm::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LossGradCheck {
    pub term: LossTerm,
    pub report: GradCheckReport,
}

const TEMPERATURE: f64 = 0.5;
const LAMBDA_R: f64 = 5.0;
const LAMBDA_A: f64 = 0.5;

/// Two fixed augmented views, the clean batch and a fixed perturbation.
struct Fixture {
    view1: GraphBatch,
    view2: GraphBatch,
    clean: GraphBatch,
    delta: Tensor,
    params: ModelParams,
}

fn fixture(seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let graphs = (0..5)
        .map(|_| {
            let n = rng.gen_range(3..7);
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
            edges.push((0, n - 1));
            let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            Graph::new(n, edges, labels, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let family = [
        AugmentationSpec::new(AugmentationKind::EdgePerturb, 0.3)?,
        AugmentationSpec::new(AugmentationKind::AttributeMask, 0.3)?,
    ];
    let pairs = graphs
        .iter()
        .map(|g| sample_view_pair(g, &family, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let v1: Vec<_> = pairs.iter().map(|p| &p.view1).collect();
    let v2: Vec<_> = pairs.iter().map(|p| &p.view2).collect();

    let model = ModelConfig {
        num_layers: 2,
        hidden_dim: 6,
        embed_dim: 5,
    };
    let mut params = init_params(&model, classes, &mut rng)?;
    // Shift every coordinate off its initial value so that biases and GIN
    // epsilons are exercised away from zero.
    let names: Vec<String> = params.tensors().keys().cloned().collect();
    for name in names {
        for v in params.tensor_mut(&name).expect("listed").data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }

    let view1 = to_view_batch(&v1, classes)?;
    let view2 = to_view_batch(&v2, classes)?;
    let clean = to_batch(&graphs, classes)?;
    let (z1, z2) = {
        let mut tape = Tape::new();
        let m = params.bind(&mut tape);
        let a = m.encode(&mut tape, &view1, None)?.z;
        let b = m.encode(&mut tape, &view2, None)?.z;
        let a = m.extract_inv(&mut tape, a)?;
        let b = m.extract_inv(&mut tape, b)?;
        (tape.value(a).clone(), tape.value(b).clone())
    };
    let pgd = PgdConfig {
        epsilon: 0.05,
        ..PgdConfig::default()
    };
    let delta = pgd_maximize(&clean, &params, &z1, &z2, TEMPERATURE, &pgd, &mut rng)?.delta;
    Ok(Fixture {
        view1,
        view2,
        clean,
        delta,
        params,
    })
}

fn forward(fx: &Fixture, params: &ModelParams, term: LossTerm) -> Result<(Tape, Var, BoundModel)> {
    let mut tape = Tape::new();
    let m = params.bind(&mut tape);
    let z1 = m.encode(&mut tape, &fx.view1, None)?.z;
    let z2 = m.encode(&mut tape, &fx.view2, None)?.z;
    let p1 = m.extract(&mut tape, z1)?;
    let p2 = m.extract(&mut tape, z2)?;
    let recon_inputs = ReconInputs {
        z1,
        z2,
        z1_aug: p1.z_aug,
        z1_inv: p1.z_inv,
        z2_aug: p2.z_aug,
        z2_inv: p2.z_inv,
    };
    let adv = |tape: &mut Tape| -> Result<Var> {
        let d = tape.leaf(fx.delta.clone());
        let z = m.encode(tape, &fx.clean, Some(d))?.z;
        let z_adv = m.extract_inv(tape, z)?;
        l_adv(tape, p1.z_inv, p2.z_inv, z_adv, TEMPERATURE)
    };
    let loss = match term {
        LossTerm::Inv => l_inv(&mut tape, p1.z_inv, p2.z_inv, TEMPERATURE)?,
        LossTerm::Recon => l_recon(&mut tape, &m, &recon_inputs, ReconMode::Full)?,
        LossTerm::Adv => adv(&mut tape)?,
        LossTerm::Joint => {
            let li = l_inv(&mut tape, p1.z_inv, p2.z_inv, TEMPERATURE)?;
            let lr = l_recon(&mut tape, &m, &recon_inputs, ReconMode::Full)?;
            let la = adv(&mut tape)?;
            joint_var(&mut tape, li, lr, la, LAMBDA_R, LAMBDA_A)?
        }
    };
    Ok((tape, loss, m))
}

fn analytic(fx: &Fixture, term: LossTerm) -> Result<GradientMap> {
    let (tape, loss, m) = forward(fx, &fx.params, term)?;
    tape.backward(loss)?.collect(&m.vars)
}

/// Checks the analytic gradient of one loss term against central differences.
pub fn gradcheck_term(term: LossTerm, cfg: &GradCheckConfig) -> Result<LossGradCheck> {
    let fx = fixture(cfg.seed)?;
    let grads = analytic(&fx, term)?;
    let report = finite_diff_check(
        |p: &ModelParams| {
            let (tape, loss, _) = forward(&fx, p, term)?;
            tape.value(loss).item()
        },
        &grads,
        &fx.params,
        cfg,
    )?;
    Ok(LossGradCheck { term, report })
}

/// [`gradcheck_term`] for every loss term.
pub fn gradcheck_losses(cfg: &GradCheckConfig) -> Result<Vec<LossGradCheck>> {
    LossTerm::ALL.iter().map(|&t| gradcheck_term(t, cfg)).collect()
}
