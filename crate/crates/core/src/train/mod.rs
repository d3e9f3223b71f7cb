//! MSE training with Adam, evaluation, and the baseline variants.

mod adam;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::features::{FeatureError, MinMaxScaler, SplitDataset, WindowedDataset};
use crate::model::{Gradients, HeadInput, ModelConfig, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("prediction length {pred} does not match target length {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("epoch callback failed: {0}")]
    Callback(String),
}

/// The proposed model and the three baselines it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MultivariateLstmAtt,
    MultivariateLstm,
    UnivariateLstm,
    UnivariateLstmAtt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::UnivariateLstm,
        Variant::UnivariateLstmAtt,
        Variant::MultivariateLstm,
        Variant::MultivariateLstmAtt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::MultivariateLstmAtt => "multivariate_lstm_att",
            Variant::MultivariateLstm => "multivariate_lstm",
            Variant::UnivariateLstm => "univariate_lstm",
            Variant::UnivariateLstmAtt => "univariate_lstm_att",
        }
    }

    pub fn attention(self) -> bool {
        matches!(self, Variant::MultivariateLstmAtt | Variant::UnivariateLstmAtt)
    }

    pub fn univariate(self) -> bool {
        matches!(self, Variant::UnivariateLstm | Variant::UnivariateLstmAtt)
    }

    /// Encoded columns this variant consumes.
    pub fn input_columns(self, width: usize) -> Vec<usize> {
        if self.univariate() {
            vec![0]
        } else {
            (0..width).collect()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub head_input: HeadInput,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Seeded per-epoch permutation of the training windows.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MultivariateLstmAtt,
            hidden: 96,
            head_input: HeadInput::Context,
            epochs: 15,
            batch_size: 32,
            seed: 0,
            optimizer: AdamConfig::default(),
            clip_norm: Some(5.0),
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(TrainError::Config("hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_width: usize, lookback: usize, horizon: usize) -> ModelConfig {
        ModelConfig {
            input_width,
            hidden: self.hidden,
            lookback,
            horizon,
            attention: self.variant.attention(),
            head_input: if self.variant.attention() {
                self.head_input
            } else {
                HeadInput::Context
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Mean training loss of each epoch, accumulated while training.
    pub epoch_losses: Vec<f64>,
    pub train_windows: usize,
    pub test_windows: usize,
    pub wall_time_secs: f64,
}

/// Per-epoch notification passed to [`train_with`] callbacks.
#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Targets outside the fitted range are clipped to [0, 1] for scoring.
fn clamp_target(mut target: Vec<f64>) -> Vec<f64> {
    target.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    target
}

/// Restricts both halves of a split to the columns a variant uses.
pub fn dataset_for(split: &SplitDataset, variant: Variant) -> Result<SplitDataset, TrainError> {
    if !variant.univariate() {
        return Ok(split.clone());
    }
    Ok(SplitDataset {
        train: split.train.select_columns(&[0])?,
        test: split.test.select_columns(&[0])?,
        split_fraction: split.split_fraction,
    })
}

/// Loss and gradient of one window.
fn window_gradient(
    params: &ModelParams,
    data: &WindowedDataset,
    index: usize,
) -> Result<(f64, Gradients), ModelError> {
    let (y, mut trace) = params.forward_slice(data.input(index))?;
    let target = clamp_target(data.target(index));
    let m = y.len() as f64;
    let loss = y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m;
    let upstream: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / m).collect();
    let grads = params.backward(&mut trace, &upstream)?;
    Ok((loss, grads))
}

pub fn train(
    split: &SplitDataset,
    config: &TrainConfig,
) -> Result<(ModelParams, MetricsReport), TrainError> {
    train_with(split, config, |_, _| Ok(()))
}

/// Trains `config.variant` on `split.train`, calling `on_epoch` after each
/// epoch (e.g. to write a checkpoint), then scores both halves.
pub fn train_with(
    split: &SplitDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary, &ModelParams) -> Result<(), TrainError>,
) -> Result<(ModelParams, MetricsReport), TrainError> {
    config.validate()?;
    let started = Instant::now();
    let data = dataset_for(split, config.variant)?;
    let train_set = &data.train;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let model_cfg = config.model_config(train_set.width(), train_set.lookback(), train_set.horizon());
    let mut params = ModelParams::init(model_cfg, config.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_0bde);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(f64, Gradients), ModelError>> = batch
                .par_iter()
                .map(|&i| window_gradient(&params, train_set, i))
                .collect();
            // fixed-order reduction
            let mut total = Gradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                total.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_no + 1,
                });
            }
            epoch_loss += batch_loss;
            total.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = config.clip_norm {
                let norm = total.global_norm();
                if norm > max_norm {
                    total.scale(max_norm / norm);
                }
            }
            params.zero_grad();
            total.accumulate_into(&mut params);
            adam_step(&mut params.tensors_mut(), &mut adam, &config.optimizer);
        }
        let loss = epoch_loss / train_set.len() as f64;
        epoch_losses.push(loss);
        on_epoch(&EpochSummary { epoch: epoch + 1, loss }, &params)?;
    }

    let train_mse = evaluate(&params, train_set)?.mse;
    let test_mse = if data.test.is_empty() {
        f64::NAN
    } else {
        evaluate(&params, &data.test)?.mse
    };
    let report = MetricsReport {
        variant: config.variant,
        seed: config.seed,
        train_mse,
        test_mse,
        epoch_losses,
        train_windows: train_set.len(),
        test_windows: data.test.len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

/// Predictions for every window of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean of per-window MSEs on scaled targets (clipped to [0, 1]).
    pub mse: f64,
    pub window_mse: Vec<f64>,
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Evaluation {
    /// Predictions and targets mapped back to vehicle counts.
    pub fn inverse_transformed(
        &self,
        scaler: &MinMaxScaler,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), FeatureError> {
        let inv = |rows: &[Vec<f64>]| {
            rows.iter()
                .map(|r| scaler.inverse_transform(0, r))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok((inv(&self.predictions)?, inv(&self.targets)?))
    }
}

/// Read-only scoring of `params` on every window of `data`. `data` must
/// already have the model's column layout.
pub fn evaluate(params: &ModelParams, data: &WindowedDataset) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Feature(FeatureError::Empty("evaluation set")));
    }
    let rows: Vec<Result<(Vec<f64>, Vec<f64>), ModelError>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok((params.predict(data.input(i))?, clamp_target(data.target(i)))))
        .collect();
    let mut predictions = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    let mut window_mse = Vec::with_capacity(data.len());
    for r in rows {
        let (p, t) = r?;
        window_mse.push(mse(&p, &t)?);
        predictions.push(p);
        targets.push(t);
    }
    let mean = window_mse.iter().sum::<f64>() / window_mse.len() as f64;
    Ok(Evaluation {
        mse: mean,
        window_mse,
        predictions,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{make_windows, split};
    use crate::nn::Matrix;

    #[test]
    fn mse_values() {
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn batch_mean_is_mean_of_window_mses() {
        let preds = [vec![0.1, 0.5, 0.9], vec![0.0, 0.2, 0.4], vec![1.0, 1.0, 0.0]];
        let targets = [vec![0.0, 0.5, 1.0], vec![0.3, 0.3, 0.3], vec![0.5, 0.0, 0.5]];
        let per: Vec<f64> = preds.iter().zip(&targets).map(|(p, t)| mse(p, t).unwrap()).collect();
        let flat_p: Vec<f64> = preds.concat();
        let flat_t: Vec<f64> = targets.concat();
        let pooled = mse(&flat_p, &flat_t).unwrap();
        assert!((pooled - per.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    }

    fn toy_split() -> SplitDataset {
        let data = Matrix::from_fn(40, 2, |r, c| if c == 0 { (r % 4) as f64 / 4.0 } else { (r % 2) as f64 });
        split(&make_windows(data, 4, 2).unwrap(), 0.8).unwrap()
    }

    #[test]
    fn constant_predictor_has_closed_form_mse() {
        let cfg = ModelConfig {
            input_width: 2,
            hidden: 2,
            lookback: 4,
            horizon: 2,
            attention: false,
            head_input: HeadInput::Context,
        };
        let mut params = ModelParams::zeros(cfg).unwrap();
        params.head.b_out.value.fill(0.5);
        let s = toy_split();
        let before = params.clone();
        let eval = evaluate(&params, &s.test).unwrap();
        assert_eq!(params, before);
        // targets cycle through 0, .25, .5, .75 in consecutive pairs
        let expected: f64 = (0..s.test.len())
            .map(|i| {
                let t = s.test.target(i);
                t.iter().map(|v| (0.5 - v) * (0.5 - v)).sum::<f64>() / 2.0
            })
            .sum::<f64>()
            / s.test.len() as f64;
        assert!((eval.mse - expected).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let s = toy_split();
        let cfg = TrainConfig {
            hidden: 4,
            epochs: 8,
            batch_size: 4,
            seed: 9,
            optimizer: AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let (p1, r1) = train(&s, &cfg).unwrap();
        let (p2, r2) = train(&s, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.test_mse.to_bits(), r2.test_mse.to_bits());
        assert!(r1.epoch_losses.last().unwrap() < &r1.epoch_losses[0], "{:?}", r1.epoch_losses);
        let mut calls = 0;
        train_with(&s, &TrainConfig { shuffle: true, ..cfg }, |e, _| {
            calls += 1;
            assert_eq!(e.epoch, calls);
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 8);
    }

    #[test]
    fn univariate_variant_uses_one_column() {
        let s = toy_split();
        let cfg = TrainConfig {
            variant: Variant::UnivariateLstm,
            hidden: 3,
            epochs: 1,
            ..TrainConfig::default()
        };
        let (p, report) = train(&s, &cfg).unwrap();
        assert_eq!(p.config.input_width, 1);
        assert!(p.attention.is_none());
        assert_eq!(report.variant, Variant::UnivariateLstm);
    }

    #[test]
    fn invalid_config_rejected() {
        let s = toy_split();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&s, &bad), Err(TrainError::Config(_))));
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
    }
}
