use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::features::FeatureSchema;
use crate::nn::Matrix;

pub const CHECKPOINT_FORMAT: &str = "demandcast-checkpoint/v1";

/// One parameter tensor as a flat row-major list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Self-describing model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema: FeatureSchema,
    /// Encoded columns the model consumes, in order (column 0 is the target).
    pub input_columns: Vec<usize>,
    pub model: ModelConfig,
    /// Training settings, kept opaque here.
    pub hyperparams: serde_json::Value,
    /// Scaler file, relative to the checkpoint's directory.
    pub scaler: String,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &ModelParams,
        schema: FeatureSchema,
        input_columns: Vec<usize>,
        hyperparams: serde_json::Value,
        scaler: impl Into<String>,
        seed: u64,
        epoch: Option<usize>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            schema,
            input_columns,
            model: params.config,
            hyperparams,
            scaler: scaler.into(),
            seed,
            epoch,
            params: params
                .tensors()
                .into_iter()
                .map(|t| NamedArray {
                    name: t.name.clone(),
                    rows: t.value.rows(),
                    cols: t.value.cols(),
                    values: t.value.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Config(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        let mut params = ModelParams::zeros(self.model)?;
        let tensors = params.tensors_mut();
        if tensors.len() != self.params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (t, a) in tensors.into_iter().zip(&self.params) {
            if t.name != a.name || t.value.shape() != (a.rows, a.cols) {
                return Err(ModelError::Config(format!(
                    "tensor `{}` {}x{} does not match expected `{}` {:?}",
                    a.name,
                    a.rows,
                    a.cols,
                    t.name,
                    t.value.shape()
                )));
            }
            t.value = Matrix::from_vec(a.rows, a.cols, a.values.clone())
                .map_err(|e| ModelError::Config(e.to_string()))?;
            t.zero_grad();
        }
        Ok(params)
    }
}
