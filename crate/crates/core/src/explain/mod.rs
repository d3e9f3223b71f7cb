//! Exact grouped Shapley attributions and hourly attention profiles.

use std::io::Write;

use chrono::{NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureKind, FeatureSchema, WindowedDataset};
use crate::ingest::step;
use crate::model::{ModelError, ModelParams};

/// Exact enumeration evaluates `2^groups` coalitions.
pub const MAX_GROUPS: usize = 12;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{count} groups exceed the exact-enumeration limit of {MAX_GROUPS}; use a sampling approximation")]
    TooManyGroups { count: usize },
    #[error("window has {actual} values, expected {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid feature groups: {0}")]
    Groups(String),
    #[error("no instances to explain")]
    EmptyInstances,
    #[error("background set is empty")]
    EmptyBackground,
    #[error("output step {step} out of range for horizon {horizon}")]
    BadStep { step: usize, horizon: usize },
    #[error("model has no attention layer")]
    NoAttention,
    #[error("windows carry no timestamps")]
    NoTimestamps,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything mapping a row-major `lookback × width` window to a forecast.
pub trait Forecaster: Sync {
    fn window_len(&self) -> usize;
    fn forecast(&self, window: &[f64]) -> Result<Vec<f64>, ExplainError>;
}

impl Forecaster for ModelParams {
    fn window_len(&self) -> usize {
        self.config.lookback * self.config.input_width
    }

    fn forecast(&self, window: &[f64]) -> Result<Vec<f64>, ExplainError> {
        Ok(self.predict(window)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupKind {
    Numeric,
    Binary,
    OneHot { drop_first: bool },
}

/// Columns that are switched together between test and background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
    pub kind: GroupKind,
}

impl FeatureGroup {
    pub fn new(name: impl Into<String>, columns: Vec<usize>, kind: GroupKind) -> Self {
        Self {
            name: name.into(),
            columns,
            kind,
        }
    }

    /// Plot value of this group for one window: the window mean for numeric
    /// and binary groups, the category number active at the last step for
    /// one-hot groups (a dropped first category counts as 0).
    pub fn representative(&self, window: &[f64], width: usize) -> f64 {
        let rows = window.len() / width;
        match self.kind {
            GroupKind::Numeric | GroupKind::Binary => {
                let c = self.columns[0];
                (0..rows).map(|r| window[r * width + c]).sum::<f64>() / rows as f64
            }
            GroupKind::OneHot { drop_first } => {
                let last = &window[(rows - 1) * width..];
                self.columns
                    .iter()
                    .position(|&c| last[c] > 0.5)
                    .map_or(0.0, |j| (j + usize::from(drop_first)) as f64)
            }
        }
    }
}

/// One group per schema feature, restricted to the encoded columns a model
/// consumes (`input_columns`), renumbered to the model's layout.
pub fn groups_for(schema: &FeatureSchema, input_columns: &[usize]) -> Vec<FeatureGroup> {
    schema
        .features()
        .iter()
        .zip(schema.ranges())
        .filter_map(|(f, (name, range))| {
            let columns: Vec<usize> = input_columns
                .iter()
                .enumerate()
                .filter(|(_, c)| range.contains(c))
                .map(|(pos, _)| pos)
                .collect();
            if columns.is_empty() {
                return None;
            }
            let kind = match f.kind() {
                FeatureKind::Numeric => GroupKind::Numeric,
                FeatureKind::Binary => GroupKind::Binary,
                FeatureKind::OneHot { .. } => GroupKind::OneHot {
                    drop_first: f.drop_first,
                },
            };
            Some(FeatureGroup::new(name, columns, kind))
        })
        .collect()
}

/// Checks that `groups` partition columns `0..width`.
pub fn validate_groups(groups: &[FeatureGroup], width: usize) -> Result<(), ExplainError> {
    if groups.len() > MAX_GROUPS {
        return Err(ExplainError::TooManyGroups { count: groups.len() });
    }
    let mut owner = vec![None; width];
    for (g, group) in groups.iter().enumerate() {
        if group.columns.is_empty() {
            return Err(ExplainError::Groups(format!("group `{}` has no columns", group.name)));
        }
        for &c in &group.columns {
            let slot = owner.get_mut(c).ok_or_else(|| {
                ExplainError::Groups(format!("column {c} of `{}` is outside width {width}", group.name))
            })?;
            if let Some(prev) = slot.replace(g) {
                return Err(ExplainError::Groups(format!(
                    "column {c} is in both `{}` and `{}`",
                    groups[prev].name, group.name
                )));
            }
        }
    }
    if let Some(c) = owner.iter().position(Option::is_none) {
        return Err(ExplainError::Groups(format!("column {c} belongs to no group")));
    }
    Ok(())
}

fn width_of(groups: &[FeatureGroup]) -> usize {
    groups
        .iter()
        .flat_map(|g| g.columns.iter())
        .max()
        .map_or(0, |c| c + 1)
}

/// Window whose columns in coalition groups (bit `g` of `coalition`) come
/// from `test` and all others from `background`, across every timestep.
pub fn mask(
    test: &[f64],
    background: &[f64],
    groups: &[FeatureGroup],
    coalition: u32,
) -> Result<Vec<f64>, ExplainError> {
    if test.len() != background.len() {
        return Err(ExplainError::Shape {
            expected: test.len(),
            actual: background.len(),
        });
    }
    let width = width_of(groups);
    if width == 0 || test.len() % width != 0 {
        return Err(ExplainError::Shape {
            expected: width,
            actual: test.len(),
        });
    }
    let mut out = background.to_vec();
    for (g, group) in groups.iter().enumerate() {
        if coalition & (1 << g) == 0 {
            continue;
        }
        for row in 0..test.len() / width {
            for &c in &group.columns {
                out[row * width + c] = test[row * width + c];
            }
        }
    }
    Ok(out)
}

/// How a 96-step forecast is reduced to the scalar being attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    #[default]
    Mean,
    Step(usize),
}

impl ValueMode {
    pub fn reduce(self, forecast: &[f64]) -> Result<f64, ExplainError> {
        match self {
            ValueMode::Mean => Ok(forecast.iter().sum::<f64>() / forecast.len() as f64),
            ValueMode::Step(k) => forecast.get(k).copied().ok_or(ExplainError::BadStep {
                step: k,
                horizon: forecast.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub group: String,
    /// Representative value of the group in the test window.
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub test_id: Option<usize>,
    /// `None` when attributed against the mean of a background set.
    pub background_id: Option<usize>,
    pub mode: ValueMode,
    /// `v(∅)`: the background output.
    pub base_value: f64,
    /// `v(all)`: the test output.
    pub prediction: f64,
    pub attributions: Vec<Attribution>,
}

impl ShapReport {
    pub fn phi(&self, group: &str) -> Option<f64> {
        self.attributions.iter().find(|a| a.group == group).map(|a| a.phi)
    }

    /// `Σφ − (prediction − base)`; zero up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.attributions.iter().map(|a| a.phi).sum::<f64>() - (self.prediction - self.base_value)
    }

    /// Group with the largest `|φ|` (first one on ties).
    pub fn top_group(&self) -> Option<&str> {
        self.attributions
            .iter()
            .fold(None::<&Attribution>, |best, a| match best {
                Some(b) if b.phi.abs() >= a.phi.abs() => Some(b),
                _ => Some(a),
            })
            .map(|a| a.group.as_str())
    }
}

fn check_window(model: &dyn Forecaster, window: &[f64]) -> Result<(), ExplainError> {
    if window.len() != model.window_len() {
        return Err(ExplainError::Shape {
            expected: model.window_len(),
            actual: window.len(),
        });
    }
    Ok(())
}

/// `n!` weights `|S|!(n−|S|−1)!/n!` indexed by `|S|`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect()
}

/// Exact Shapley values against the mean output over `backgrounds`.
fn shapley_against(
    model: &dyn Forecaster,
    test: &[f64],
    backgrounds: &[&[f64]],
    groups: &[FeatureGroup],
    mode: ValueMode,
) -> Result<ShapReport, ExplainError> {
    if backgrounds.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let width = width_of(groups);
    validate_groups(groups, width)?;
    check_window(model, test)?;
    for b in backgrounds {
        check_window(model, b)?;
    }
    let n = groups.len();
    let coalitions = 1u32 << n;
    let values: Vec<f64> = (0..coalitions)
        .into_par_iter()
        .map(|s| {
            let mut total = 0.0;
            for b in backgrounds {
                let masked = mask(test, b, groups, s)?;
                total += mode.reduce(&model.forecast(&masked)?)?;
            }
            Ok(total / backgrounds.len() as f64)
        })
        .collect::<Result<_, ExplainError>>()?;

    let weights = shapley_weights(n);
    let attributions = groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let bit = 1u32 << g;
            let phi = (0..coalitions)
                .filter(|s| s & bit == 0)
                .map(|s| weights[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]))
                .sum();
            Attribution {
                group: group.name.clone(),
                value: group.representative(test, width),
                phi,
            }
        })
        .collect();
    Ok(ShapReport {
        test_id: None,
        background_id: None,
        mode,
        base_value: values[0],
        prediction: values[(coalitions - 1) as usize],
        attributions,
    })
}

/// Exact grouped Shapley values of `test` against one `background` window.
pub fn shapley(
    model: &dyn Forecaster,
    test: &[f64],
    background: &[f64],
    groups: &[FeatureGroup],
    mode: ValueMode,
) -> Result<ShapReport, ExplainError> {
    shapley_against(model, test, &[background], groups, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRow {
    pub instance_id: usize,
    pub group: String,
    pub value: f64,
    pub phi: f64,
}

/// One row per (instance, group), sorted by group then instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmTable {
    pub rows: Vec<BeeswarmRow>,
}

impl BeeswarmTable {
    pub fn from_reports(reports: &[ShapReport], groups: &[FeatureGroup]) -> Self {
        let mut rows = Vec::with_capacity(reports.len() * groups.len());
        for group in groups {
            let mut block: Vec<BeeswarmRow> = reports
                .iter()
                .filter_map(|r| {
                    let a = r.attributions.iter().find(|a| a.group == group.name)?;
                    Some(BeeswarmRow {
                        instance_id: r.test_id.unwrap_or_default(),
                        group: a.group.clone(),
                        value: a.value,
                        phi: a.phi,
                    })
                })
                .collect();
            block.sort_by_key(|r| r.instance_id);
            rows.extend(block);
        }
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), ExplainError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["instance_id", "group", "value", "phi"])?;
        for r in &self.rows {
            w.write_record([
                r.instance_id.to_string(),
                r.group.clone(),
                r.value.to_string(),
                r.phi.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Each instance against the mean output over `backgrounds`.
pub fn shapley_series(
    model: &dyn Forecaster,
    instances: &[(usize, &[f64])],
    backgrounds: &[&[f64]],
    groups: &[FeatureGroup],
    mode: ValueMode,
) -> Result<(BeeswarmTable, Vec<ShapReport>), ExplainError> {
    if instances.is_empty() {
        return Err(ExplainError::EmptyInstances);
    }
    let reports = instances
        .iter()
        .map(|&(id, window)| {
            let mut r = shapley_against(model, window, backgrounds, groups, mode)?;
            r.test_id = Some(id);
            Ok(r)
        })
        .collect::<Result<Vec<_>, ExplainError>>()?;
    Ok((BeeswarmTable::from_reports(&reports, groups), reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourBucket {
    pub hour: u32,
    /// Mean attention weight of one step falling in this hour.
    pub mean_weight: f64,
    /// Mean total weight per window falling in this hour; the 24 shares sum to 1.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub windows: usize,
    pub hours: Vec<HourBucket>,
}

impl AttentionProfile {
    /// Aggregates weight vectors whose first step falls at the paired time.
    pub fn from_weights<'a>(
        traces: impl IntoIterator<Item = (NaiveDateTime, &'a [f64])>,
    ) -> Self {
        let mut total = [0.0f64; 24];
        let mut count = [0usize; 24];
        let mut windows = 0;
        for (start, weights) in traces {
            windows += 1;
            for (t, w) in weights.iter().enumerate() {
                let h = (start + step() * t as i32).hour() as usize;
                total[h] += w;
                count[h] += 1;
            }
        }
        let hours = (0..24)
            .map(|h| HourBucket {
                hour: h as u32,
                mean_weight: if count[h] > 0 { total[h] / count[h] as f64 } else { 0.0 },
                share: if windows > 0 { total[h] / windows as f64 } else { 0.0 },
            })
            .collect();
        Self { windows, hours }
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), ExplainError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["hour", "mean_weight", "share"])?;
        for b in &self.hours {
            w.write_record([b.hour.to_string(), b.mean_weight.to_string(), b.share.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hour-of-day profile of the attention weights over every window of `data`.
pub fn attention_profile(
    model: &ModelParams,
    data: &WindowedDataset,
) -> Result<AttentionProfile, ExplainError> {
    if model.attention.is_none() {
        return Err(ExplainError::NoAttention);
    }
    let traces: Vec<(NaiveDateTime, Vec<f64>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let start = data.origin_time(i).ok_or(ExplainError::NoTimestamps)?;
            let (_, trace) = model.forward_slice(data.input(i))?;
            Ok((start, trace.weights))
        })
        .collect::<Result<_, ExplainError>>()?;
    Ok(AttentionProfile::from_weights(
        traces.iter().map(|(t, w)| (*t, w.as_slice())),
    ))
}

#[cfg(test)]
mod tests;
