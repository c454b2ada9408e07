//! Contrastive, reconstruction and adversarial losses and their weighted sum.
//!
//! Losses are recorded on a [`Tape`] so that a single backward pass yields
//! gradients for the whole joint objective. [`info_nce_value`] is a
//! convenience wrapper for plain tensors.

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::BoundModel;

/// Which reconstruction terms contribute to the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Same-view and cross-view terms.
    #[default]
    Full,
    /// Drops same-view terms, keeping only cross-view reconstruction.
    WithoutIntra,
    /// Drops cross-view terms, keeping only same-view reconstruction.
    WithoutInter,
}

impl ReconMode {
    fn intra(self) -> bool {
        self != ReconMode::WithoutIntra
    }

    fn inter(self) -> bool {
        self != ReconMode::WithoutInter
    }
}

/// Encoder outputs and disentangled embeddings of both views.
#[derive(Clone, Copy, Debug)]
pub struct ReconInputs {
    pub z1: Var,
    pub z2: Var,
    pub z1_aug: Var,
    pub z1_inv: Var,
    pub z2_aug: Var,
    pub z2_inv: Var,
}

/// Reconstruction targets and the four reconstructions of them.
#[derive(Clone, Copy, Debug)]
pub struct ReconOutputs {
    pub z1: Var,
    pub z2: Var,
    /// `g_r(z1_aug ⊙ z1_inv)`
    pub r1: Var,
    /// `g_r(z2_aug ⊙ z2_inv)`
    pub r2: Var,
    /// `g_r(z1_aug ⊙ z2_inv)`
    pub cr1: Var,
    /// `g_r(z2_aug ⊙ z1_inv)`
    pub cr2: Var,
}

/// Scalar loss values and the weights that combined them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_inv: f64,
    pub l_recon: f64,
    pub l_adv: f64,
    pub total: f64,
    pub lambda_r: f64,
    pub lambda_a: f64,
    /// InfoNCE temperature, when the breakdown came from a training step.
    pub temperature: Option<f64>,
}

impl LossBreakdown {
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = Some(temperature);
        self
    }
}

fn check_lambdas(lambda_r: f64, lambda_a: f64) -> Result<()> {
    if !(lambda_r >= 0.0 && lambda_a >= 0.0 && lambda_r.is_finite() && lambda_a.is_finite()) {
        return Err(Error::invalid(format!(
            "loss weights must be finite and non-negative, got lambda_r={lambda_r}, lambda_a={lambda_a}"
        )));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

fn row_normalize(tape: &mut Tape, z: Var) -> Result<Var> {
    let value = tape.value(z);
    for i in 0..value.rows() {
        if value.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::invalid(format!("row {i} has zero norm")));
        }
    }
    let sq = tape.mul(z, z)?;
    let sq = tape.sum_axis(sq, 1)?;
    let norm = tape.sqrt(sq)?;
    tape.div(z, norm)
}

/// Symmetric cross-view InfoNCE: row `i` of `za` is the positive for row
/// `i` of `zb` and every other row of the opposite view is a negative.
pub fn info_nce(tape: &mut Tape, za: Var, zb: Var, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let (sa, sb) = (tape.shape(za).to_vec(), tape.shape(zb).to_vec());
    if sa != sb || sa.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "info_nce",
            left: sa,
            right: sb,
        });
    }
    let b = sa[0];
    if b < 2 {
        return Err(Error::invalid(format!(
            "info_nce needs at least 2 rows for negatives, got {b}"
        )));
    }
    let na = row_normalize(tape, za)?;
    let nb = row_normalize(tape, zb)?;
    let nbt = tape.transpose(nb)?;
    let sim = tape.matmul(na, nbt)?;
    let sim = tape.scale(sim, 1.0 / temperature)?;
    let simt = tape.transpose(sim)?;
    let lse_a = tape.log_sum_exp_rows(sim)?;
    let lse_b = tape.log_sum_exp_rows(simt)?;
    let lse_a = tape.sum(lse_a)?;
    let lse_b = tape.sum(lse_b)?;
    let pos = tape.mul(na, nb)?;
    let pos = tape.sum(pos)?;
    let pos = tape.scale(pos, 2.0 / temperature)?;
    let num = tape.add(lse_a, lse_b)?;
    let num = tape.sub(num, pos)?;
    tape.scale(num, 1.0 / (2.0 * b as f64))
}

/// [`info_nce`] on plain tensors.
pub fn info_nce_value(za: &Tensor, zb: &Tensor, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(za.clone());
    let b = tape.leaf(zb.clone());
    let loss = info_nce(&mut tape, a, b, temperature)?;
    tape.value(loss).item()
}

/// Agreement between the invariant embeddings of the two views.
pub fn l_inv(tape: &mut Tape, z1_inv: Var, z2_inv: Var, temperature: f64) -> Result<Var> {
    info_nce(tape, z1_inv, z2_inv, temperature)
}

/// Runs the reconstructor on both same-view and cross-view pairings.
pub fn reconstruct_all(tape: &mut Tape, model: &BoundModel, x: &ReconInputs) -> Result<ReconOutputs> {
    Ok(ReconOutputs {
        z1: x.z1,
        z2: x.z2,
        r1: model.reconstruct(tape, x.z1_aug, x.z1_inv)?,
        r2: model.reconstruct(tape, x.z2_aug, x.z2_inv)?,
        cr1: model.reconstruct(tape, x.z1_aug, x.z2_inv)?,
        cr2: model.reconstruct(tape, x.z2_aug, x.z1_inv)?,
    })
}

/// `1/(2B)` times the summed squared residuals selected by `mode`.
pub fn recon_residual_loss(tape: &mut Tape, r: &ReconOutputs, mode: ReconMode) -> Result<Var> {
    let shape = tape.shape(r.z1).to_vec();
    for v in [r.z2, r.r1, r.r2, r.cr1, r.cr2] {
        if tape.shape(v) != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "l_recon",
                left: shape,
                right: tape.shape(v).to_vec(),
            });
        }
    }
    let b = shape.first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::invalid("l_recon on an empty batch"));
    }
    let mut pairs = Vec::with_capacity(4);
    if mode.intra() {
        pairs.push((r.z1, r.r1));
        pairs.push((r.z2, r.r2));
    }
    if mode.inter() {
        pairs.push((r.z1, r.cr1));
        pairs.push((r.z2, r.cr2));
    }
    let mut acc: Option<Var> = None;
    for (target, recon) in pairs {
        let d = tape.sub(target, recon)?;
        let sq = tape.l2_norm_sq(d)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq)?,
        });
    }
    let acc = acc.expect("every mode keeps at least one pair");
    tape.scale(acc, 1.0 / (2.0 * b as f64))
}

/// Reconstruction loss over both views.
pub fn l_recon(tape: &mut Tape, model: &BoundModel, inputs: &ReconInputs, mode: ReconMode) -> Result<Var> {
    let outputs = reconstruct_all(tape, model, inputs)?;
    recon_residual_loss(tape, &outputs, mode)
}

/// Contrasts each view's invariant embedding with the adversarial view's.
pub fn l_adv(tape: &mut Tape, z1_inv: Var, z2_inv: Var, z_adv_inv: Var, temperature: f64) -> Result<Var> {
    let a = info_nce(tape, z1_inv, z_adv_inv, temperature)?;
    let b = info_nce(tape, z2_inv, z_adv_inv, temperature)?;
    tape.add(a, b)
}

/// Weighted total `l_inv + lambda_r * l_recon + lambda_a * l_adv`.
pub fn joint(l_inv: f64, l_recon: f64, l_adv: f64, lambda_r: f64, lambda_a: f64) -> Result<LossBreakdown> {
    check_lambdas(lambda_r, lambda_a)?;
    Ok(LossBreakdown {
        l_inv,
        l_recon,
        l_adv,
        total: (l_inv + lambda_r * l_recon) + lambda_a * l_adv,
        lambda_r,
        lambda_a,
        temperature: None,
    })
}

/// Tape version of [`joint`] with the same evaluation order.
pub fn joint_var(tape: &mut Tape, l_inv: Var, l_recon: Var, l_adv: Var, lambda_r: f64, lambda_a: f64) -> Result<Var> {
    check_lambdas(lambda_r, lambda_a)?;
    let r = tape.scale(l_recon, lambda_r)?;
    let a = tape.scale(l_adv, lambda_a)?;
    let s = tape.add(l_inv, r)?;
    tape.add(s, a)
}
