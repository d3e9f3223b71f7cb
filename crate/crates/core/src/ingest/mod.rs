//! Raw charging sessions and temperature feeds onto a regular 15-minute grid.
//!
//! All timestamps inside the crate are naive local times: RFC 3339 inputs are
//! shifted into the configured UTC offset before gridding, so weekday, month
//! and holiday lookups are always local.

mod io;

use std::collections::BTreeSet;

use chrono::{Datelike, Duration, Month, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    parse_grid, parse_holidays, parse_series, parse_sessions, parse_temperature, parse_timestamp,
    write_grid, write_holidays, write_series, write_temperature, SessionParse, TIMESTAMP_FORMAT,
};

/// Grid resolution in minutes.
pub const STEP_MINUTES: i64 = 15;
/// Intervals per day.
pub const STEPS_PER_DAY: usize = 96;

pub fn step() -> Duration {
    Duration::minutes(STEP_MINUTES)
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: &'static str, column: &'static str },
    #[error("{file}: line {line}: {message}")]
    Row {
        file: &'static str,
        line: u64,
        message: String,
    },
    #[error("temperature readings are empty")]
    EmptyReadings,
    #[error("temperature readings are not sorted at index {index}")]
    UnsortedReadings { index: usize },
    #[error("no temperature reading within reach of interval {interval}")]
    TemperatureGap { interval: NaiveDateTime },
    #[error("grid: line {line}: expected timestamp {expected}, found {found}")]
    GridGap {
        line: u64,
        expected: NaiveDateTime,
        found: NaiveDateTime,
    },
    #[error("timestamp {0} is not aligned to a 15-minute boundary")]
    Misaligned(NaiveDateTime),
    #[error("series columns have different lengths: {0}")]
    LengthMismatch(String),
    #[error("{0}")]
    Empty(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How raw timestamps are written and which local zone they map to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampKind {
    /// `YYYY-MM-DD HH:MM[:SS]`, already local.
    Local,
    /// RFC 3339 with an explicit offset, converted to the local offset.
    Rfc3339,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSettings {
    pub kind: TimestampKind,
    /// Local zone as a fixed offset from UTC, in minutes (e.g. -480 for PST).
    pub utc_offset_minutes: i32,
}

impl Default for TimeSettings {
    fn default() -> Self {
        Self {
            kind: TimestampKind::Local,
            utc_offset_minutes: -480,
        }
    }
}

/// One raw charging event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionRecord {
    pub start: NaiveDateTime,
    pub charge_end: NaiveDateTime,
    pub disconnect: NaiveDateTime,
    pub energy_kwh: f64,
}

impl SessionRecord {
    pub fn new(
        start: NaiveDateTime,
        charge_end: NaiveDateTime,
        disconnect: NaiveDateTime,
        energy_kwh: f64,
    ) -> Result<Self, String> {
        if start > charge_end {
            return Err(format!("start {start} is after charge_end {charge_end}"));
        }
        if charge_end > disconnect {
            return Err(format!(
                "charge_end {charge_end} is after disconnect {disconnect}"
            ));
        }
        if !(energy_kwh >= 0.0) || !energy_kwh.is_finite() {
            return Err(format!("energy_kwh must be a non-negative number, got {energy_kwh}"));
        }
        Ok(Self {
            start,
            charge_end,
            disconnect,
            energy_kwh,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureReading {
    pub time: NaiveDateTime,
    pub celsius: f64,
}

/// Dates on which the campus observes a holiday or closure.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, date: NaiveDate) -> bool {
        self.dates.insert(date)
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.dates.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarInfo {
    pub weekday: Weekday,
    pub month: Month,
    pub holiday: bool,
}

impl CalendarInfo {
    pub fn at(time: NaiveDateTime, holidays: &HolidayCalendar) -> Self {
        Self {
            weekday: time.weekday(),
            month: Month::try_from(time.month() as u8).expect("chrono months are 1..=12"),
            holiday: holidays.contains(time.date()),
        }
    }
}

pub fn is_aligned(t: NaiveDateTime) -> bool {
    t.second() == 0 && t.nanosecond() == 0 && i64::from(t.minute()) % STEP_MINUTES == 0
}

/// Demand counts on the grid before exogenous columns are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandGrid {
    pub origin: NaiveDateTime,
    pub demand: Vec<u32>,
}

impl DemandGrid {
    pub fn new(origin: NaiveDateTime, demand: Vec<u32>) -> Result<Self, IngestError> {
        if !is_aligned(origin) {
            return Err(IngestError::Misaligned(origin));
        }
        Ok(Self { origin, demand })
    }

    pub fn from_sessions(
        sessions: &[SessionRecord],
        origin: NaiveDateTime,
        n_intervals: usize,
    ) -> Result<Self, IngestError> {
        Self::new(origin, aggregate_demand(sessions, origin, n_intervals))
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    pub fn time_at(&self, k: usize) -> NaiveDateTime {
        self.origin + step() * k as i32
    }
}

/// Regular 15-minute grid of demand counts with aligned temperature and
/// calendar columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    origin: NaiveDateTime,
    demand: Vec<u32>,
    temperature: Vec<f64>,
    calendar: Vec<CalendarInfo>,
}

impl IntervalSeries {
    pub fn new(
        origin: NaiveDateTime,
        demand: Vec<u32>,
        temperature: Vec<f64>,
        calendar: Vec<CalendarInfo>,
    ) -> Result<Self, IngestError> {
        if !is_aligned(origin) {
            return Err(IngestError::Misaligned(origin));
        }
        if demand.len() != temperature.len() || demand.len() != calendar.len() {
            return Err(IngestError::LengthMismatch(format!(
                "demand {}, temperature {}, calendar {}",
                demand.len(),
                temperature.len(),
                calendar.len()
            )));
        }
        Ok(Self {
            origin,
            demand,
            temperature,
            calendar,
        })
    }

    pub fn origin(&self) -> NaiveDateTime {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    pub fn demand(&self) -> &[u32] {
        &self.demand
    }

    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn calendar(&self) -> &[CalendarInfo] {
        &self.calendar
    }

    pub fn time_at(&self, k: usize) -> NaiveDateTime {
        self.origin + step() * k as i32
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.len()).map(|k| self.time_at(k))
    }

    /// Index of the interval starting at `t`, if it lies on the grid.
    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        let secs = (t - self.origin).num_seconds();
        if secs < 0 || secs % (STEP_MINUTES * 60) != 0 {
            return None;
        }
        let k = (secs / (STEP_MINUTES * 60)) as usize;
        (k < self.len()).then_some(k)
    }

    pub fn demand_grid(&self) -> DemandGrid {
        DemandGrid {
            origin: self.origin,
            demand: self.demand.clone(),
        }
    }

    /// Sub-series of intervals `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> IntervalSeries {
        IntervalSeries {
            origin: self.time_at(start),
            demand: self.demand[start..end].to_vec(),
            temperature: self.temperature[start..end].to_vec(),
            calendar: self.calendar[start..end].to_vec(),
        }
    }
}

/// Number of sessions charging in each interval: element `k` counts sessions
/// whose `[start, charge_end)` span overlaps
/// `[origin + 15k min, origin + 15(k+1) min)`. Sessions outside the grid are
/// ignored.
pub fn aggregate_demand(
    sessions: &[SessionRecord],
    origin: NaiveDateTime,
    n_intervals: usize,
) -> Vec<u32> {
    const STEP_SECS: i64 = STEP_MINUTES * 60;
    let mut counts = vec![0u32; n_intervals];
    if n_intervals == 0 {
        return counts;
    }
    let last = n_intervals as i64 - 1;
    for s in sessions {
        let lo = (s.start - origin).num_seconds();
        let hi = (s.charge_end - origin).num_seconds();
        if hi <= lo {
            continue;
        }
        let first = lo.div_euclid(STEP_SECS).max(0);
        let end = ((hi + STEP_SECS - 1).div_euclid(STEP_SECS) - 1).min(last);
        for k in first..=end {
            counts[k as usize] += 1;
        }
    }
    counts
}

/// Temperature for each interval of `grid`.
///
/// A reading exactly at the interval start is copied. Otherwise the value is
/// linearly interpolated between the enclosing readings; before the first or
/// after the last reading the nearest reading is used if it lies within
/// [`TEMPERATURE_REACH_MINUTES`], else the interval is reported as a gap.
pub fn join_temperature(
    grid: &DemandGrid,
    readings: &[TemperatureReading],
) -> Result<IntervalSeries, IngestError> {
    if readings.is_empty() {
        return Err(IngestError::EmptyReadings);
    }
    if let Some(i) = readings.windows(2).position(|w| w[1].time < w[0].time) {
        return Err(IngestError::UnsortedReadings { index: i + 1 });
    }
    let reach = Duration::minutes(TEMPERATURE_REACH_MINUTES);
    let mut temperature = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.time_at(k);
        let idx = readings.partition_point(|r| r.time < t);
        let value = match (idx.checked_sub(1).map(|i| readings[i]), readings.get(idx)) {
            (_, Some(next)) if next.time == t => next.celsius,
            (Some(prev), Some(next)) => {
                let span = (next.time - prev.time).num_seconds() as f64;
                let w = (t - prev.time).num_seconds() as f64 / span;
                prev.celsius + w * (next.celsius - prev.celsius)
            }
            (Some(prev), None) if t - prev.time <= reach => prev.celsius,
            (None, Some(next)) if next.time - t <= reach => next.celsius,
            _ => return Err(IngestError::TemperatureGap { interval: t }),
        };
        temperature.push(value);
    }
    let calendar = (0..grid.len())
        .map(|k| CalendarInfo::at(grid.time_at(k), &HolidayCalendar::default()))
        .collect();
    IntervalSeries::new(grid.origin, grid.demand.clone(), temperature, calendar)
}

/// Furthest a leading or trailing interval may be from the nearest reading.
pub const TEMPERATURE_REACH_MINUTES: i64 = 120;

/// Recomputes weekday, month and holiday for every interval from its start
/// timestamp.
pub fn attach_calendar(mut series: IntervalSeries, holidays: &HolidayCalendar) -> IntervalSeries {
    let origin = series.origin;
    for (k, info) in series.calendar.iter_mut().enumerate() {
        *info = CalendarInfo::at(origin + step() * k as i32, holidays);
    }
    series
}
