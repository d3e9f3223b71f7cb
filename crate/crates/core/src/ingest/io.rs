use std::io::{BufRead, BufReader, Read, Write};

use chrono::{DateTime, FixedOffset, Month, NaiveDate, NaiveDateTime, Weekday};
use csv::{ReaderBuilder, StringRecord, Trim};

use super::{
    is_aligned, step, CalendarInfo, DemandGrid, HolidayCalendar, IngestError, IntervalSeries,
    SessionRecord, TemperatureReading, TimeSettings, TimestampKind,
};

/// Local timestamp layout used for every file this crate writes.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

/// A session row that could not be turned into a [`SessionRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SessionParse {
    pub records: Vec<SessionRecord>,
    pub errors: Vec<RowError>,
}

pub fn parse_timestamp(raw: &str, settings: &TimeSettings) -> Result<NaiveDateTime, String> {
    let raw = raw.trim();
    match settings.kind {
        TimestampKind::Local => NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
            .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
            .map_err(|e| format!("bad local timestamp `{raw}`: {e}")),
        TimestampKind::Rfc3339 => {
            let offset = FixedOffset::east_opt(settings.utc_offset_minutes * 60)
                .ok_or_else(|| format!("invalid UTC offset {} min", settings.utc_offset_minutes))?;
            DateTime::parse_from_rfc3339(raw)
                .map(|t| t.with_timezone(&offset).naive_local())
                .map_err(|e| format!("bad RFC 3339 timestamp `{raw}`: {e}"))
        }
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .trim(Trim::All)
        .flexible(true)
        .from_reader(source)
}

fn column(
    headers: &StringRecord,
    file: &'static str,
    name: &'static str,
) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or(IngestError::MissingColumn { file, column: name })
}

fn field<'r>(record: &'r StringRecord, idx: usize, name: &str) -> Result<&'r str, String> {
    record
        .get(idx)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("missing value for `{name}`"))
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a `start,charge_end,disconnect,energy_kwh` CSV. Bad rows are
/// collected with their line numbers instead of aborting the parse.
pub fn parse_sessions<R: Read>(
    source: R,
    settings: &TimeSettings,
) -> Result<SessionParse, IngestError> {
    const FILE: &str = "sessions";
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let cols = [
        column(&headers, FILE, "start")?,
        column(&headers, FILE, "charge_end")?,
        column(&headers, FILE, "disconnect")?,
        column(&headers, FILE, "energy_kwh")?,
    ];
    let mut out = SessionParse::default();
    for result in rdr.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let parsed = (|| {
            let start = parse_timestamp(field(&record, cols[0], "start")?, settings)?;
            let charge_end = parse_timestamp(field(&record, cols[1], "charge_end")?, settings)?;
            let disconnect = parse_timestamp(field(&record, cols[2], "disconnect")?, settings)?;
            let raw = field(&record, cols[3], "energy_kwh")?;
            let energy: f64 = raw
                .parse()
                .map_err(|_| format!("bad energy_kwh `{raw}`"))?;
            SessionRecord::new(start, charge_end, disconnect, energy)
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(RowError {
                line: line_of(&record),
                message,
            }),
        }
    }
    Ok(out)
}

/// Reads a `timestamp,temp_c` CSV. Any bad row aborts with its line number.
pub fn parse_temperature<R: Read>(
    source: R,
    settings: &TimeSettings,
) -> Result<Vec<TemperatureReading>, IngestError> {
    const FILE: &str = "temperature";
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let t_col = column(&headers, FILE, "timestamp")?;
    let v_col = column(&headers, FILE, "temp_c")?;
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let row = (|| {
            let time = parse_timestamp(field(&record, t_col, "timestamp")?, settings)?;
            let raw = field(&record, v_col, "temp_c")?;
            let celsius: f64 = raw.parse().map_err(|_| format!("bad temp_c `{raw}`"))?;
            if !celsius.is_finite() {
                return Err(format!("non-finite temp_c `{raw}`"));
            }
            Ok(TemperatureReading { time, celsius })
        })();
        out.push(row.map_err(|message| IngestError::Row {
            file: FILE,
            line: line_of(&record),
            message,
        })?);
    }
    Ok(out)
}

/// Reads a gapless `timestamp,demand` grid CSV.
pub fn parse_grid<R: Read>(source: R, settings: &TimeSettings) -> Result<DemandGrid, IngestError> {
    const FILE: &str = "grid";
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let t_col = column(&headers, FILE, "timestamp")?;
    let d_col = column(&headers, FILE, "demand")?;
    let mut origin = None;
    let mut demand = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = line_of(&record);
        let row_err = |message: String| IngestError::Row {
            file: FILE,
            line,
            message,
        };
        let time = parse_timestamp(field(&record, t_col, "timestamp").map_err(row_err)?, settings)
            .map_err(row_err)?;
        let raw = field(&record, d_col, "demand").map_err(row_err)?;
        let count: u32 = raw
            .parse()
            .map_err(|_| row_err(format!("bad demand `{raw}`")))?;
        let origin = *origin.get_or_insert(time);
        let expected = origin + step() * demand.len() as i32;
        if time != expected {
            return Err(IngestError::GridGap {
                line,
                expected,
                found: time,
            });
        }
        demand.push(count);
    }
    let origin = origin.ok_or(IngestError::Empty("grid file has no rows"))?;
    if !is_aligned(origin) {
        return Err(IngestError::Misaligned(origin));
    }
    Ok(DemandGrid { origin, demand })
}

/// One ISO date per line; blank lines, `#` comments and a `date` header are
/// skipped.
pub fn parse_holidays<R: Read>(source: R) -> Result<HolidayCalendar, IngestError> {
    let mut calendar = HolidayCalendar::default();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || text.eq_ignore_ascii_case("date") {
            continue;
        }
        let date = NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| IngestError::Row {
            file: "holidays",
            line: i as u64 + 1,
            message: format!("bad date `{text}`: {e}"),
        })?;
        calendar.insert(date);
    }
    Ok(calendar)
}

fn weekday_label(w: Weekday) -> String {
    w.to_string()
}

fn month_label(m: Month) -> &'static str {
    &m.name()[..3]
}

fn parse_weekday(s: &str) -> Result<Weekday, String> {
    s.parse().map_err(|_| format!("bad weekday `{s}`"))
}

fn parse_month(s: &str) -> Result<Month, String> {
    s.parse().map_err(|_| format!("bad month `{s}`"))
}

/// Writes `timestamp,demand,temp_c,weekday,month,holiday`.
pub fn write_series<W: Write>(series: &IntervalSeries, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["timestamp", "demand", "temp_c", "weekday", "month", "holiday"])?;
    for (k, t) in series.timestamps().enumerate() {
        let cal = series.calendar()[k];
        w.write_record([
            t.format(TIMESTAMP_FORMAT).to_string(),
            series.demand()[k].to_string(),
            series.temperature()[k].to_string(),
            weekday_label(cal.weekday),
            month_label(cal.month).to_string(),
            u8::from(cal.holiday).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_series`]. Weekday and month columns must
/// agree with the timestamp.
pub fn parse_series<R: Read>(source: R) -> Result<IntervalSeries, IngestError> {
    const FILE: &str = "series";
    let settings = TimeSettings {
        kind: TimestampKind::Local,
        utc_offset_minutes: 0,
    };
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let cols = [
        column(&headers, FILE, "timestamp")?,
        column(&headers, FILE, "demand")?,
        column(&headers, FILE, "temp_c")?,
        column(&headers, FILE, "weekday")?,
        column(&headers, FILE, "month")?,
        column(&headers, FILE, "holiday")?,
    ];
    let mut origin: Option<NaiveDateTime> = None;
    let (mut demand, mut temperature, mut calendar) = (Vec::new(), Vec::new(), Vec::new());
    for result in rdr.records() {
        let record = result?;
        let line = line_of(&record);
        let row = (|| {
            let time = parse_timestamp(field(&record, cols[0], "timestamp")?, &settings)?;
            let d: u32 = field(&record, cols[1], "demand")?
                .parse()
                .map_err(|_| "bad demand".to_string())?;
            let temp: f64 = field(&record, cols[2], "temp_c")?
                .parse()
                .map_err(|_| "bad temp_c".to_string())?;
            let weekday = parse_weekday(field(&record, cols[3], "weekday")?)?;
            let month = parse_month(field(&record, cols[4], "month")?)?;
            let holiday = match field(&record, cols[5], "holiday")? {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(format!("bad holiday flag `{other}`")),
            };
            let info = CalendarInfo {
                weekday,
                month,
                holiday,
            };
            let derived = CalendarInfo::at(time, &HolidayCalendar::default());
            if derived.weekday != weekday || derived.month != month {
                return Err(format!("calendar columns disagree with timestamp {time}"));
            }
            Ok((time, d, temp, info))
        })()
        .map_err(|message| IngestError::Row {
            file: FILE,
            line,
            message,
        })?;
        let origin = *origin.get_or_insert(row.0);
        let expected = origin + step() * demand.len() as i32;
        if row.0 != expected {
            return Err(IngestError::GridGap {
                line,
                expected,
                found: row.0,
            });
        }
        demand.push(row.1);
        temperature.push(row.2);
        calendar.push(row.3);
    }
    let origin = origin.ok_or(IngestError::Empty("series file has no rows"))?;
    IntervalSeries::new(origin, demand, temperature, calendar)
}

pub fn write_grid<W: Write>(grid: &DemandGrid, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["timestamp", "demand"])?;
    for (k, d) in grid.demand.iter().enumerate() {
        w.write_record([
            grid.time_at(k).format(TIMESTAMP_FORMAT).to_string(),
            d.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_temperature<W: Write>(
    readings: &[TemperatureReading],
    sink: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["timestamp", "temp_c"])?;
    for r in readings {
        w.write_record([r.time.format(TIMESTAMP_FORMAT).to_string(), r.celsius.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_holidays<W: Write>(calendar: &HolidayCalendar, mut sink: W) -> Result<(), IngestError> {
    for d in calendar.dates() {
        writeln!(sink, "{}", d.format("%Y-%m-%d"))?;
    }
    sink.flush()?;
    Ok(())
}
