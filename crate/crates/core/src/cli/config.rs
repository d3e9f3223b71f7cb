use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::features::{FeatureSchema, PrepareOptions, SchemaOptions};
use crate::ingest::TimeSettings;
use crate::synth::SynthConfig;
use crate::train::{TrainConfig, Variant};

/// Input files. Unset entries must be supplied as flags by commands that
/// need them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub sessions: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub temperature: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    /// Ingested series (output of `ingest`).
    pub series: Option<PathBuf>,
    pub time: TimeSettings,
}

/// Everything a command can be configured with. Loaded from JSON; missing
/// fields take defaults and command-line flags override both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Overrides `train.seed` and `synth.seed` when set.
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub schema: SchemaOptions,
    pub prepare: PrepareOptions,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Seeds for `eval`; empty means just the training seed.
    pub eval_seeds: Vec<u64>,
    /// Variants for `eval`; empty means all four.
    pub eval_variants: Vec<Variant>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Applies `seed` (from the file or a flag) to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
            self.synth.seed = s;
        }
        self
    }

    pub fn feature_schema(&self) -> FeatureSchema {
        FeatureSchema::with_options(self.schema)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.eval_seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.eval_seeds.clone()
        }
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.eval_variants.is_empty() {
            Variant::ALL.to_vec()
        } else {
            self.eval_variants.clone()
        }
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::new("usage", format!("missing {what} path (flag or config)")))
}
