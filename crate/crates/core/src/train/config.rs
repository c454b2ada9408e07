use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::ReconMode;

/// Starting point of the perturbation search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdInit {
    #[default]
    Zero,
    /// Uniform in the `[-epsilon, epsilon]` box.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdConfig {
    /// Radius of the l-infinity ball.
    pub epsilon: f64,
    pub steps: usize,
    /// Per-step magnitude; `2.5 * epsilon / steps` when absent.
    pub step_size: Option<f64>,
    pub init: PgdInit,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            steps: 3,
            step_size: None,
            init: PgdInit::Zero,
        }
    }
}

impl PgdConfig {
    pub fn effective_step_size(&self) -> f64 {
        match self.step_size {
            Some(s) => s,
            None if self.steps == 0 => 0.0,
            None => 2.5 * self.epsilon / self.steps as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "pgd epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("pgd step_size must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Linear-probe hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("invalid probe settings {self:?}")));
        }
        Ok(())
    }
}

/// Cross-validation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub lambda_r: f64,
    pub lambda_a: f64,
    pub recon_mode: ReconMode,
    pub pgd: PgdConfig,
    /// Views are drawn uniformly from this family.
    pub augmentations: Vec<AugmentationSpec>,
    pub model: ModelConfig,
    pub seed: u64,
    /// Fill the `seconds` metrics column with wall time. Off by default so
    /// that metrics files are reproducible byte for byte.
    pub record_time: bool,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = |kind| AugmentationSpec { kind, ratio: 0.2 };
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 0.2,
            lambda_r: 5.0,
            lambda_a: 0.5,
            recon_mode: ReconMode::Full,
            pgd: PgdConfig::default(),
            augmentations: vec![
                aug(AugmentationKind::NodeDrop),
                aug(AugmentationKind::EdgePerturb),
                aug(AugmentationKind::AttributeMask),
            ],
            model: ModelConfig::default(),
            seed: 0,
            record_time: false,
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_a >= 0.0) {
            return Err(Error::invalid("lambda_r and lambda_a must be non-negative"));
        }
        if self.augmentations.is_empty() {
            return Err(Error::invalid("augmentation family is empty"));
        }
        for a in &self.augmentations {
            a.validate()?;
        }
        if self.eval.folds < 2 || self.eval.seeds.is_empty() {
            return Err(Error::invalid("eval needs at least 2 folds and one seed"));
        }
        self.model.validate()?;
        self.pgd.validate()?;
        self.probe.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "train config".into(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert!((PgdConfig::default().effective_step_size() - 2.5 * 0.01 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = TrainConfig::from_json(r#"{"epochs": 3, "pgd": {"steps": 1}}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.pgd.steps, 1);
        assert_eq!(cfg.pgd.epsilon, 0.01);
        assert_eq!(cfg.lambda_r, 5.0);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(TrainConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"pgd": {"eps": 3}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"recon_mode": "partial"}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_json(r#"{"batch_size": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lambda_a": -0.5}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"augmentations": []}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"pgd": {"epsilon": -1}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = TrainConfig::default();
        let back: TrainConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
