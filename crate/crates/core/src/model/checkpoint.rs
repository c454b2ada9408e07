use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk model: parameter name -> `{shape, values}` plus a config echo.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub input_dim: usize,
    /// Training configuration that produced the weights, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, train_config: Option<serde_json::Value>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: params.config.clone(),
            input_dim: params.input_dim,
            train_config,
            params: params.tensors().clone(),
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        ModelParams::from_tensors(self.model, self.input_dim, self.params)
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    train_config: Option<serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&Checkpoint::new(params, train_config)).map_err(|e| {
        Error::Json {
            context: "serialize checkpoint".into(),
            source: e,
        }
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    ckpt.into_params()
}
