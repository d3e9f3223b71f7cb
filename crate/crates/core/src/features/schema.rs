use std::ops::Range;

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::ingest::IntervalSeries;
use crate::nn::Matrix;

/// Where a feature's values come from in an [`IntervalSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Request,
    Temperature,
    Holiday,
    Weekday,
    Month,
    /// Fractional hour of day, 0.0..24.0.
    HourOfDay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Binary,
    OneHot { cardinality: usize },
}

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
const MONTHS: [&str; 12] = [
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub source: FeatureSource,
    /// Drop the first category of a one-hot group (all-zero row encodes it).
    #[serde(default)]
    pub drop_first: bool,
}

impl Feature {
    pub fn new(source: FeatureSource) -> Self {
        Self {
            source,
            drop_first: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.source {
            FeatureSource::Request => "request",
            FeatureSource::Temperature => "temperature",
            FeatureSource::Holiday => "holiday",
            FeatureSource::Weekday => "weekday",
            FeatureSource::Month => "month",
            FeatureSource::HourOfDay => "hour",
        }
    }

    pub fn kind(&self) -> FeatureKind {
        let full = match self.source {
            FeatureSource::Request | FeatureSource::Temperature | FeatureSource::HourOfDay => {
                return FeatureKind::Numeric
            }
            FeatureSource::Holiday => return FeatureKind::Binary,
            FeatureSource::Weekday => 7,
            FeatureSource::Month => 12,
        };
        FeatureKind::OneHot {
            cardinality: full - usize::from(self.drop_first),
        }
    }

    pub fn width(&self) -> usize {
        match self.kind() {
            FeatureKind::OneHot { cardinality } => cardinality,
            _ => 1,
        }
    }

    fn column_names(&self) -> Vec<String> {
        let labels: &[&str] = match self.source {
            FeatureSource::Weekday => &WEEKDAYS,
            FeatureSource::Month => &MONTHS,
            _ => return vec![self.name().to_string()],
        };
        let skip = usize::from(self.drop_first);
        labels[skip..]
            .iter()
            .map(|l| format!("{}_{l}", self.name()))
            .collect()
    }
}

/// Ordered feature layout of the encoded matrix. The target (`request`)
/// always occupies column 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Feature>", into = "Vec<Feature>")]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl TryFrom<Vec<Feature>> for FeatureSchema {
    type Error = FeatureError;

    fn try_from(features: Vec<Feature>) -> Result<Self, Self::Error> {
        Self::new(features)
    }
}

impl From<FeatureSchema> for Vec<Feature> {
    fn from(s: FeatureSchema) -> Self {
        s.features
    }
}

/// Switches for building the default schema.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaOptions {
    /// Encode months with 11 columns (January is the all-zero row).
    #[serde(default)]
    pub drop_first_month: bool,
    /// Append a numeric hour-of-day column.
    #[serde(default)]
    pub hour_of_day: bool,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, FeatureError> {
        if features.first().map(|f| f.source) != Some(FeatureSource::Request) {
            return Err(FeatureError::Schema("the first feature must be `request`".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.source == f.source) {
                return Err(FeatureError::Schema(format!("duplicate feature `{}`", f.name())));
            }
            if f.drop_first && !matches!(f.kind(), FeatureKind::OneHot { .. }) {
                return Err(FeatureError::Schema(format!(
                    "drop_first only applies to one-hot groups, not `{}`",
                    f.name()
                )));
            }
        }
        let schema = Self { features };
        if schema.width() < 2 {
            return Err(FeatureError::Schema("encoded width must be at least 2".into()));
        }
        Ok(schema)
    }

    /// request, temperature, holiday, weekday (7), month (12 or 11), [hour].
    pub fn with_options(options: SchemaOptions) -> Self {
        let mut features = vec![
            Feature::new(FeatureSource::Request),
            Feature::new(FeatureSource::Temperature),
            Feature::new(FeatureSource::Holiday),
            Feature::new(FeatureSource::Weekday),
            Feature {
                source: FeatureSource::Month,
                drop_first: options.drop_first_month,
            },
        ];
        if options.hour_of_day {
            features.push(Feature::new(FeatureSource::HourOfDay));
        }
        Self::new(features).expect("default schema is valid")
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(Feature::width).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.features.iter().flat_map(Feature::column_names).collect()
    }

    /// Column range of every feature, in schema order.
    pub fn ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut start = 0;
        self.features
            .iter()
            .map(|f| {
                let r = start..start + f.width();
                start = r.end;
                (f.name(), r)
            })
            .collect()
    }

    pub fn numeric_columns(&self) -> Vec<usize> {
        self.features
            .iter()
            .zip(self.ranges())
            .filter(|(f, _)| f.kind() == FeatureKind::Numeric)
            .map(|(_, (_, r))| r.start)
            .collect()
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::with_options(SchemaOptions::default())
    }
}

/// Encodes every interval of `series` as one row in schema order.
pub fn encode(series: &IntervalSeries, schema: &FeatureSchema) -> Result<Matrix, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::Empty("series"));
    }
    let n = schema.width();
    let mut out = Matrix::zeros(series.len(), n);
    for t in 0..series.len() {
        let cal = series.calendar()[t];
        let row = out.row_mut(t);
        let mut col = 0;
        for f in schema.features() {
            match f.source {
                FeatureSource::Request => row[col] = f64::from(series.demand()[t]),
                FeatureSource::Temperature => row[col] = series.temperature()[t],
                FeatureSource::Holiday => row[col] = if cal.holiday { 1.0 } else { 0.0 },
                FeatureSource::HourOfDay => {
                    let time = series.time_at(t);
                    row[col] = f64::from(time.hour()) + f64::from(time.minute()) / 60.0;
                }
                FeatureSource::Weekday | FeatureSource::Month => {
                    let category = if f.source == FeatureSource::Weekday {
                        cal.weekday.num_days_from_monday() as usize
                    } else {
                        cal.month.number_from_month() as usize - 1
                    };
                    let skip = usize::from(f.drop_first);
                    if category >= skip {
                        row[col + category - skip] = 1.0;
                    }
                }
            }
            col += f.width();
        }
    }
    Ok(out)
}
