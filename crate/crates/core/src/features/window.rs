use std::sync::Arc;

use chrono::NaiveDateTime;

use super::FeatureError;
use crate::ingest::step;
use crate::nn::Matrix;

/// Supervised windows over one shared encoded matrix.
///
/// Window `i` starting at row `s` uses rows `[s, s+lookback)` as input and
/// column 0 of rows `[s+lookback, s+lookback+horizon)` as target. Windows
/// are views; the matrix is stored once.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    data: Arc<Matrix>,
    lookback: usize,
    horizon: usize,
    starts: Vec<usize>,
    origin: Option<NaiveDateTime>,
}

impl WindowedDataset {
    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// First row index of each window.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Shape as `(windows, lookback, width)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.len(), self.lookback, self.width())
    }

    /// Row-major `lookback × width` block of window `i`.
    pub fn input(&self, i: usize) -> &[f64] {
        let n = self.data.cols();
        let s = self.starts[i];
        &self.data.as_slice()[s * n..(s + self.lookback) * n]
    }

    pub fn input_matrix(&self, i: usize) -> Matrix {
        let s = self.starts[i];
        self.data.slice_rows(s, s + self.lookback)
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        let s = self.starts[i] + self.lookback;
        (s..s + self.horizon).map(|r| self.data.get(r, 0)).collect()
    }

    /// Timestamp of the first input row of window `i`.
    pub fn origin_time(&self, i: usize) -> Option<NaiveDateTime> {
        self.origin.map(|o| o + step() * self.starts[i] as i32)
    }

    /// Timestamp of the first forecast step of window `i`.
    pub fn forecast_time(&self, i: usize) -> Option<NaiveDateTime> {
        self.origin
            .map(|o| o + step() * (self.starts[i] + self.lookback) as i32)
    }

    pub fn with_origin(mut self, origin: NaiveDateTime) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn series_origin(&self) -> Option<NaiveDateTime> {
        self.origin
    }

    /// Same windows restricted to a subset of columns. Column 0 must stay
    /// first so targets are unchanged.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self, FeatureError> {
        if columns.first() != Some(&0) {
            return Err(FeatureError::Schema("target column 0 must remain first".into()));
        }
        Ok(Self {
            data: Arc::new(self.data.select_columns(columns)),
            starts: self.starts.clone(),
            ..*self
        })
    }

    /// Keeps windows whose index satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        Self {
            data: Arc::clone(&self.data),
            starts: (0..self.len())
                .filter(|&i| keep(i))
                .map(|i| self.starts[i])
                .collect(),
            ..*self
        }
    }

    fn with_starts(&self, starts: Vec<usize>) -> Self {
        Self {
            data: Arc::clone(&self.data),
            starts,
            ..*self
        }
    }
}

/// All windows of `matrix` with the given lookback and horizon.
pub fn make_windows(
    matrix: Matrix,
    lookback: usize,
    horizon: usize,
) -> Result<WindowedDataset, FeatureError> {
    make_windows_strided(matrix, lookback, horizon, 1)
}

/// Like [`make_windows`] but keeps every `stride`-th window.
pub fn make_windows_strided(
    matrix: Matrix,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset, FeatureError> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(FeatureError::Schema(
            "lookback, horizon and stride must be positive".into(),
        ));
    }
    let required = lookback + horizon;
    if matrix.rows() < required {
        return Err(FeatureError::TooShort {
            rows: matrix.rows(),
            required,
        });
    }
    let count = matrix.rows() - required + 1;
    Ok(WindowedDataset {
        data: Arc::new(matrix),
        lookback,
        horizon,
        starts: (0..count).step_by(stride).collect(),
        origin: None,
    })
}

/// Chronological train/test partition of a windowed dataset.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub split_fraction: f64,
}

/// Number of training windows for `total` windows: `⌊fraction·total⌋`.
pub fn train_count(total: usize, fraction: f64) -> Result<usize, FeatureError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FeatureError::BadFraction(fraction));
    }
    Ok((fraction * total as f64).floor() as usize)
}

/// First `⌊fraction·N⌋` windows go to training, the rest to test.
pub fn split(dataset: &WindowedDataset, fraction: f64) -> Result<SplitDataset, FeatureError> {
    if dataset.is_empty() {
        return Err(FeatureError::Empty("dataset"));
    }
    let n_train = train_count(dataset.len(), fraction)?;
    Ok(SplitDataset {
        train: dataset.with_starts(dataset.starts[..n_train].to_vec()),
        test: dataset.with_starts(dataset.starts[n_train..].to_vec()),
        split_fraction: fraction,
    })
}
