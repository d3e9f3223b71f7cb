//! Encoding, scaling and windowing of an [`IntervalSeries`](crate::ingest::IntervalSeries)
//! into supervised learning pairs.

mod scaler;
mod schema;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scaler::{fit_scaler, ClampBounds, MinMaxScaler, ScaledColumn};
pub use schema::{encode, Feature, FeatureKind, FeatureSchema, FeatureSource, SchemaOptions};
pub use window::{
    make_windows, make_windows_strided, split, train_count, SplitDataset, WindowedDataset,
};

use crate::ingest::IntervalSeries;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("series has {rows} rows but windowing needs at least {required}")]
    TooShort { rows: usize, required: usize },
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("scaler fitted for width {expected}, matrix has width {actual}")]
    ScalerLayout { expected: usize, actual: usize },
    #[error("scaler has no statistics for column {column}")]
    NotFitted { column: usize },
}

/// Lookback/horizon/split settings for [`prepare`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareOptions {
    pub lookback: usize,
    pub horizon: usize,
    pub split_fraction: f64,
    /// Fit the scaler on every row before splitting instead of on the
    /// training rows only.
    pub scale_before_split: bool,
    pub clamp: ClampBounds,
    /// Keep every `stride`-th window.
    pub stride: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            split_fraction: 0.8,
            scale_before_split: false,
            clamp: ClampBounds::default(),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: FeatureSchema,
    pub scaler: MinMaxScaler,
    pub split: SplitDataset,
}

/// Encode → fit scaler → scale and clamp → window → chronological split.
pub fn prepare(
    series: &IntervalSeries,
    schema: &FeatureSchema,
    options: &PrepareOptions,
) -> Result<PreparedData, FeatureError> {
    let raw = encode(series, schema)?;
    let probe = make_windows_strided(raw.clone(), options.lookback, options.horizon, options.stride)?;
    let probe_split = split(&probe, options.split_fraction)?;
    let fit_rows = if options.scale_before_split {
        raw.rows()
    } else {
        let last = probe_split
            .train
            .starts()
            .last()
            .ok_or(FeatureError::Empty("training split"))?;
        last + options.lookback + options.horizon
    };
    let names = schema.column_names();
    let numeric: Vec<(usize, String)> = schema
        .numeric_columns()
        .into_iter()
        .map(|c| (c, names[c].clone()))
        .collect();
    let scaler = fit_scaler(&raw.slice_rows(0, fit_rows), &numeric)?;
    let scaled = scaler.transform_clamped(&raw, options.clamp)?;
    let windows = make_windows_strided(scaled, options.lookback, options.horizon, options.stride)?
        .with_origin(series.origin());
    Ok(PreparedData {
        schema: schema.clone(),
        scaler,
        split: split(&windows, options.split_fraction)?,
    })
}

/// Encodes and scales a series with an already fitted scaler.
pub fn encode_scaled(
    series: &IntervalSeries,
    schema: &FeatureSchema,
    scaler: &MinMaxScaler,
    clamp: ClampBounds,
) -> Result<crate::nn::Matrix, FeatureError> {
    scaler.transform_clamped(&encode(series, schema)?, clamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{attach_calendar, join_temperature, DemandGrid, HolidayCalendar, TemperatureReading};
    use chrono::{Duration, NaiveDate, NaiveDateTime};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    fn random_series(origin: &str, n: usize, seed: u64) -> IntervalSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origin = ts(origin);
        let grid = DemandGrid::new(origin, (0..n).map(|_| rng.random_range(0..30)).collect()).unwrap();
        let readings: Vec<_> = (0..n)
            .map(|k| TemperatureReading {
                time: origin + Duration::minutes(15 * k as i64),
                celsius: rng.random_range(5.0..35.0),
            })
            .collect();
        let holidays = HolidayCalendar::new([NaiveDate::from_ymd_opt(2023, 7, 4).unwrap()]);
        attach_calendar(join_temperature(&grid, &readings).unwrap(), &holidays)
    }

    #[test]
    fn wednesday_in_july_row() {
        let s = random_series("2023-07-05 10:00", 1, 1);
        let m = encode(&s, &FeatureSchema::default()).unwrap();
        let ranges = FeatureSchema::default().ranges();
        let row = m.row(0);
        assert_eq!(&row[ranges[3].1.clone()], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let month = &row[ranges[4].1.clone()];
        assert_eq!(month[6], 1.0);
        assert_eq!(month.iter().sum::<f64>(), 1.0);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn widths() {
        assert_eq!(FeatureSchema::default().width(), 22);
        let dropped = FeatureSchema::with_options(SchemaOptions {
            drop_first_month: true,
            hour_of_day: false,
        });
        assert_eq!(dropped.width(), 21);
        assert_eq!(dropped.column_names()[10], "month_feb");
        let with_hour = FeatureSchema::with_options(SchemaOptions {
            drop_first_month: false,
            hour_of_day: true,
        });
        assert_eq!(with_hour.width(), 23);
    }

    #[test]
    fn one_hot_groups_partition_every_row() {
        let s = random_series("2023-06-28 00:00", 96 * 10, 2);
        let schema = FeatureSchema::default();
        let m = encode(&s, &schema).unwrap();
        for r in 0..m.rows() {
            for (_, range) in schema.ranges().into_iter().skip(3) {
                assert_eq!(m.row(r)[range].iter().sum::<f64>(), 1.0);
            }
            assert!(m.row(r)[2..].iter().all(|v| *v == 0.0 || *v == 1.0));
        }
        assert_eq!(m.get(96 * 6 + 5, 2), 1.0); // 2023-07-04
    }

    #[test]
    fn schema_validation() {
        assert!(FeatureSchema::new(vec![Feature::new(FeatureSource::Temperature), Feature::new(FeatureSource::Request)]).is_err());
        assert!(FeatureSchema::new(vec![Feature::new(FeatureSource::Request)]).is_err());
        assert!(FeatureSchema::new(vec![Feature::new(FeatureSource::Request), Feature::new(FeatureSource::Request)]).is_err());
        let json = serde_json::to_string(&FeatureSchema::default()).unwrap();
        let back: FeatureSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FeatureSchema::default());
        assert!(serde_json::from_str::<FeatureSchema>(r#"[{"source":"month"}]"#).is_err());
    }

    #[test]
    fn prepare_fits_on_training_rows_only() {
        let s = random_series("2023-06-01 00:00", 96 * 6, 3);
        let schema = FeatureSchema::default();
        let opts = PrepareOptions::default();
        let prepared = prepare(&s, &schema, &opts).unwrap();
        let split = &prepared.split;
        assert_eq!(split.train.len() + split.test.len(), 96 * 4 + 1);
        let fit_end = split.train.starts().last().unwrap() + 192;
        let max_train = s.demand()[..fit_end].iter().max().copied().unwrap();
        assert_eq!(prepared.scaler.columns[0].max, f64::from(max_train));
        for i in 0..split.train.len() {
            assert!(split.train.input(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for i in 0..split.test.len() {
            assert!(split.test.input(i).iter().all(|v| (-0.05..=1.05).contains(v)));
        }
        assert_eq!(split.test.forecast_time(0), Some(s.time_at(split.test.starts()[0] + 96)));
        let all = prepare(&s, &schema, &PrepareOptions { scale_before_split: true, ..opts }).unwrap();
        assert_eq!(all.scaler.columns[0].max, f64::from(*s.demand().iter().max().unwrap()));
    }
}
