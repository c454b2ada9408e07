use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::GradientMap;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A collection of named tensors that can be perturbed one coordinate at a time.
pub trait Parameters: Clone {
    fn named(&self) -> Vec<(&str, &Tensor)>;
    fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor>;
}

impl Parameters for BTreeMap<String, Tensor> {
    fn named(&self) -> Vec<(&str, &Tensor)> {
        self.iter().map(|(k, v)| (k.as_str(), v)).collect()
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.get_mut(name)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates to check; all of them when the parameter count is smaller.
    pub samples: usize,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-5,
            samples: 100,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateError>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central finite differences of `objective`.
pub fn finite_diff_check<P, F>(
    mut objective: F,
    analytic: &GradientMap,
    params: &P,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> Result<f64>,
{
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::GradCheck(format!("step must be positive, got {}", cfg.step)));
    }
    let base = objective(params)?;
    let again = objective(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::GradCheck(format!(
            "objective is not deterministic: {base} vs {again}"
        )));
    }

    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, t) in params.named() {
        let g = analytic
            .get(name)
            .ok_or_else(|| Error::GradCheck(format!("no gradient for {name}")))?;
        if g.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "finite_diff_check",
                left: t.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        coords.extend((0..t.numel()).map(|i| (name.to_string(), i)));
    }
    let chosen: Vec<usize> = if coords.len() <= cfg.samples {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = index::sample(&mut rng, coords.len(), cfg.samples).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut worst: Option<CoordinateError> = None;
    let mut probe = params.clone();
    for &c in &chosen {
        let (name, i) = &coords[c];
        let original = probe.tensor_mut(name).expect("listed above").data()[*i];
        probe.tensor_mut(name).unwrap().data_mut()[*i] = original + cfg.step;
        let plus = objective(&probe)?;
        probe.tensor_mut(name).unwrap().data_mut()[*i] = original - cfg.step;
        let minus = objective(&probe)?;
        probe.tensor_mut(name).unwrap().data_mut()[*i] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.get(name).unwrap().data()[*i];
        let rel = relative_error(a, numeric, cfg.abs_floor);
        if worst.as_ref().is_none_or(|w| rel > w.rel_error) {
            worst = Some(CoordinateError {
                param: name.clone(),
                index: *i,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        checked: chosen.len(),
        max_rel_error,
        worst,
        passed: max_rel_error < cfg.tol,
    })
}
