use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledColumn {
    pub name: String,
    pub index: usize,
    pub min: f64,
    pub max: f64,
}

impl ScaledColumn {
    #[inline]
    fn forward(&self, x: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (x - self.min) / range
        } else {
            0.0
        }
    }

    #[inline]
    fn inverse(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Column-wise min-max scaling of the numeric columns; every other column
/// passes through unchanged. Persisted as `{"width": n, "columns": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub width: usize,
    pub columns: Vec<ScaledColumn>,
}

/// Bounds applied to scaled values that fall outside the fitted range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampBounds {
    fn default() -> Self {
        Self { lo: -0.05, hi: 1.05 }
    }
}

/// Fits min/max over all rows of `matrix` for the listed `(index, name)`
/// columns.
pub fn fit_scaler(matrix: &Matrix, numeric: &[(usize, String)]) -> Result<MinMaxScaler, FeatureError> {
    if matrix.rows() == 0 {
        return Err(FeatureError::Empty("matrix to fit"));
    }
    let columns = numeric
        .iter()
        .map(|(index, name)| {
            if *index >= matrix.cols() {
                return Err(FeatureError::Schema(format!(
                    "column {index} out of range for width {}",
                    matrix.cols()
                )));
            }
            let (min, max) = (0..matrix.rows())
                .map(|r| matrix.get(r, *index))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            Ok(ScaledColumn {
                name: name.clone(),
                index: *index,
                min,
                max,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(MinMaxScaler {
        width: matrix.cols(),
        columns,
    })
}

impl MinMaxScaler {
    fn check_width(&self, matrix: &Matrix) -> Result<(), FeatureError> {
        if matrix.cols() != self.width {
            return Err(FeatureError::ScalerLayout {
                expected: self.width,
                actual: matrix.cols(),
            });
        }
        Ok(())
    }

    pub fn column(&self, index: usize) -> Result<&ScaledColumn, FeatureError> {
        self.columns
            .iter()
            .find(|c| c.index == index)
            .ok_or(FeatureError::NotFitted { column: index })
    }

    /// `x' = (x − min)/(max − min)` on numeric columns; constant columns map to 0.
    pub fn transform(&self, matrix: &Matrix) -> Result<Matrix, FeatureError> {
        self.check_width(matrix)?;
        let mut out = matrix.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in &self.columns {
                row[c.index] = c.forward(row[c.index]);
            }
        }
        Ok(out)
    }

    /// Like [`transform`](Self::transform), then clamps scaled numeric values.
    pub fn transform_clamped(&self, matrix: &Matrix, bounds: ClampBounds) -> Result<Matrix, FeatureError> {
        let mut out = self.transform(matrix)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in &self.columns {
                row[c.index] = row[c.index].clamp(bounds.lo, bounds.hi);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, index: usize, values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let col = self.column(index)?;
        Ok(values.iter().map(|&v| col.inverse(v)).collect())
    }

    pub fn transform_column(&self, index: usize, values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let col = self.column(index)?;
        Ok(values.iter().map(|&v| col.forward(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> Matrix {
        Matrix::column(values.to_vec())
    }

    fn fit(values: &[f64]) -> MinMaxScaler {
        fit_scaler(&col(values), &[(0, "x".into())]).unwrap()
    }

    #[test]
    fn fitted_range() {
        let s = fit(&[0.0, 5.0, 10.0]);
        assert_eq!((s.columns[0].min, s.columns[0].max), (0.0, 10.0));
        let out = s.transform(&col(&[0.0, 5.0, 10.0])).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = fit(&[3.0, 3.0, 3.0]);
        assert_eq!((s.columns[0].min, s.columns[0].max), (3.0, 3.0));
        assert_eq!(s.transform(&col(&[3.0, 3.0])).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let s = fit(&[0.0, 10.0]);
        let raw = s.transform(&col(&[-5.0, 12.0, 5.0])).unwrap();
        assert_eq!(raw.as_slice(), &[-0.5, 1.2, 0.5]);
        let clamped = s.transform_clamped(&col(&[-5.0, 12.0, 5.0]), ClampBounds::default()).unwrap();
        assert_eq!(clamped.as_slice(), &[-0.05, 1.05, 0.5]);
    }

    #[test]
    fn pass_through_columns_untouched() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![4.0, 0.0, 1.0]]).unwrap();
        let s = fit_scaler(&m, &[(0, "request".into())]).unwrap();
        let out = s.transform(&m).unwrap();
        assert_eq!(out.col_values(1), vec![1.0, 0.0]);
        assert_eq!(out.col_values(2), vec![0.0, 1.0]);
    }

    #[test]
    fn layout_and_unfitted_errors() {
        let s = fit(&[0.0, 1.0]);
        assert!(matches!(
            s.transform(&Matrix::zeros(2, 2)),
            Err(FeatureError::ScalerLayout { expected: 1, actual: 2 })
        ));
        assert!(matches!(
            s.inverse_transform(3, &[0.0]),
            Err(FeatureError::NotFitted { column: 3 })
        ));
    }

    #[test]
    fn json_layout() {
        let s = fit(&[1.0, 2.0]);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["columns"][0]["name"], "x");
        assert_eq!(v["columns"][0]["min"], 1.0);
        assert_eq!(v["columns"][0]["max"], 2.0);
    }

    proptest! {
        #[test]
        fn round_trip_on_fitted_range(values in proptest::collection::vec(-1e4f64..1e4, 2..1000)) {
            let s = fit(&values);
            let scaled = s.transform(&col(&values)).unwrap();
            let back = s.inverse_transform(0, scaled.as_slice()).unwrap();
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
