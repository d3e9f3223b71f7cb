//! Synthetic campus-style charging demand with calendar, seasonal and
//! temperature structure.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    write_grid, write_holidays, write_temperature, CalendarInfo, HolidayCalendar, IngestError,
    IntervalSeries, TemperatureReading, STEPS_PER_DAY,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureModel {
    pub annual_mean: f64,
    pub annual_amplitude: f64,
    /// Day of year with the warmest mean.
    pub warmest_day: f64,
    pub daily_amplitude: f64,
    /// Hour of the daily maximum.
    pub warmest_hour: f64,
    pub noise_sd: f64,
}

impl Default for TemperatureModel {
    fn default() -> Self {
        Self {
            annual_mean: 18.0,
            annual_amplitude: 5.0,
            warmest_day: 220.0,
            daily_amplitude: 4.0,
            warmest_hour: 15.0,
            noise_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub days: usize,
    /// Mean vehicles charging per 15-minute slot on an ordinary weekday.
    pub base_profile: Vec<f64>,
    /// Monday first.
    pub weekday_multipliers: [f64; 7],
    /// January first.
    pub month_multipliers: [f64; 12],
    pub holiday_multiplier: f64,
    pub temperature: TemperatureModel,
    /// Demand scales by `1 + coupling * (temp - annual_mean) / annual_amplitude`.
    pub temperature_coupling: f64,
    /// Holidays to use instead of the generated campus calendar.
    pub holidays: Option<Vec<NaiveDate>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            start: NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date"),
            days: 730,
            base_profile: default_profile(DEFAULT_PEAK),
            weekday_multipliers: [1.0, 1.0, 1.0, 1.0, 0.85, 0.3, 0.28],
            month_multipliers: [1.0, 1.0, 1.0, 0.95, 0.85, 0.5, 0.45, 0.55, 1.0, 1.0, 0.95, 0.8],
            holiday_multiplier: 0.15,
            temperature: TemperatureModel::default(),
            temperature_coupling: 0.1,
            holidays: None,
        }
    }
}

/// Midday weekday rate of [`default_profile`].
pub const DEFAULT_PEAK: f64 = 200.0;

/// Night floor, morning ramp from 07:00, plateau around midday, tapering
/// through the evening. `peak` is the midday rate.
pub fn default_profile(peak: f64) -> Vec<f64> {
    let bump = |h: f64, centre: f64, width: f64| (-((h - centre) / width).powi(2) / 2.0).exp();
    let raw: Vec<f64> = (0..STEPS_PER_DAY)
        .map(|k| {
            let h = k as f64 / 4.0;
            0.03 + 0.9 * bump(h, 11.5, 2.3) + 0.45 * bump(h, 15.5, 2.0) + 0.12 * bump(h, 19.5, 1.5)
        })
        .collect();
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw.into_iter().map(|v| peak * v / max).collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.days == 0 {
            return Err(SynthError::Config("days must be at least 1".into()));
        }
        if self.base_profile.len() != STEPS_PER_DAY {
            return Err(SynthError::Config(format!(
                "base_profile needs {STEPS_PER_DAY} values, got {}",
                self.base_profile.len()
            )));
        }
        let all = self
            .base_profile
            .iter()
            .chain(&self.weekday_multipliers)
            .chain(&self.month_multipliers)
            .chain(std::iter::once(&self.holiday_multiplier));
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(SynthError::Config(format!("rates and multipliers must be >= 0, got {v}")));
            }
        }
        let t = &self.temperature;
        if !(t.annual_amplitude > 0.0) || t.noise_sd < 0.0 || !t.daily_amplitude.is_finite() {
            return Err(SynthError::Config(
                "temperature amplitude must be positive and noise sd non-negative".into(),
            ));
        }
        if !self.temperature_coupling.is_finite() {
            return Err(SynthError::Config("temperature_coupling must be finite".into()));
        }
        Ok(())
    }

    pub fn origin(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).expect("midnight exists")
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start + Duration::days(self.days as i64 - 1)
    }
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).expect("nth weekday exists")
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    (1..=5)
        .rev()
        .find_map(|n| NaiveDate::from_weekday_of_month_opt(year, month, weekday, n))
        .expect("every month has four of each weekday")
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

/// US campus closures for one calendar year, including the winter break
/// from 24 December through 31 December.
pub fn campus_holidays(year: i32) -> Vec<NaiveDate> {
    let thanksgiving = nth_weekday(year, 11, Weekday::Thu, 4);
    let mut days = vec![
        ymd(year, 1, 1),
        nth_weekday(year, 1, Weekday::Mon, 3),
        nth_weekday(year, 2, Weekday::Mon, 3),
        ymd(year, 3, 31),
        last_weekday(year, 5, Weekday::Mon),
        ymd(year, 6, 19),
        ymd(year, 7, 4),
        nth_weekday(year, 9, Weekday::Mon, 1),
        ymd(year, 11, 11),
        thanksgiving,
        thanksgiving.succ_opt().expect("valid date"),
    ];
    days.extend((24..=31).map(|d| ymd(year, 12, d)));
    days
}

pub fn holiday_calendar(config: &SynthConfig) -> HolidayCalendar {
    if let Some(dates) = &config.holidays {
        return HolidayCalendar::new(dates.iter().copied());
    }
    let (first, last) = (config.start, config.end_date());
    HolidayCalendar::new(
        (first.year()..=last.year())
            .flat_map(campus_holidays)
            .filter(|d| *d >= first && *d <= last),
    )
}

/// Noise-free temperature at `t`.
pub fn temperature_mean(model: &TemperatureModel, t: NaiveDateTime) -> f64 {
    let day = t.ordinal0() as f64;
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    model.annual_mean
        + model.annual_amplitude * (2.0 * PI * (day - model.warmest_day) / 365.25).cos()
        + model.daily_amplitude * (2.0 * PI * (hour - model.warmest_hour) / 24.0).cos()
}

/// Expected demand at slot `k` of the day, before Poisson sampling.
pub fn rate(config: &SynthConfig, info: &CalendarInfo, slot: usize, temp_c: f64) -> f64 {
    let t = &config.temperature;
    let weekday = config.weekday_multipliers[info.weekday.num_days_from_monday() as usize];
    let month = config.month_multipliers[info.month.number_from_month() as usize - 1];
    let holiday = if info.holiday { config.holiday_multiplier } else { 1.0 };
    let temp = 1.0 + config.temperature_coupling * (temp_c - t.annual_mean) / t.annual_amplitude;
    (config.base_profile[slot] * weekday * month * holiday * temp).max(0.0)
}

/// Samples a gapless series starting at midnight of `config.start`.
pub fn generate(config: &SynthConfig) -> Result<(IntervalSeries, HolidayCalendar), SynthError> {
    config.validate()?;
    let holidays = holiday_calendar(config);
    let origin = config.origin();
    let n = config.days * STEPS_PER_DAY;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.temperature.noise_sd)
        .map_err(|e| SynthError::Config(e.to_string()))?;

    let mut demand = Vec::with_capacity(n);
    let mut temperature = Vec::with_capacity(n);
    let mut calendar = Vec::with_capacity(n);
    for k in 0..n {
        let t = origin + crate::ingest::step() * k as i32;
        let temp = temperature_mean(&config.temperature, t) + noise.sample(&mut rng);
        // two decimals keeps the CSV compact and round-trips exactly
        let temp = (temp * 100.0).round() / 100.0;
        let info = CalendarInfo::at(t, &holidays);
        let lambda = rate(config, &info, k % STEPS_PER_DAY, temp);
        let count = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| SynthError::Config(e.to_string()))?
                .sample(&mut rng) as u32
        } else {
            0
        };
        demand.push(count);
        temperature.push(temp);
        calendar.push(info);
    }
    Ok((IntervalSeries::new(origin, demand, temperature, calendar)?, holidays))
}

/// Paths written by [`export`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub grid: PathBuf,
    pub temperature: PathBuf,
    pub holidays: PathBuf,
}

pub fn export(
    series: &IntervalSeries,
    holidays: &HolidayCalendar,
    dir: &Path,
) -> Result<ExportedFiles, SynthError> {
    let files = ExportedFiles {
        grid: dir.join("grid.csv"),
        temperature: dir.join("temperature.csv"),
        holidays: dir.join("holidays.csv"),
    };
    let create = |path: &Path| {
        File::create(path)
            .map(BufWriter::new)
            .map_err(|source| SynthError::Io {
                path: path.to_path_buf(),
                source,
            })
    };
    write_grid(&series.demand_grid(), create(&files.grid)?)?;
    let readings: Vec<TemperatureReading> = series
        .timestamps()
        .zip(series.temperature())
        .map(|(time, &celsius)| TemperatureReading { time, celsius })
        .collect();
    write_temperature(&readings, create(&files.temperature)?)?;
    write_holidays(holidays, create(&files.holidays)?)?;
    Ok(files)
}
