//! CSV formats for prices, load and schedules.
//!
//! Every file starts with a fixed header and one ISO-8601 timestamp per row.
//! Timestamps must be strictly increasing and equally spaced. Floats are
//! written in shortest round-trip form, so parsing a written file yields the
//! same numbers bit for bit.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};

use crate::domain::{
    soc_trajectory, BatteryParams, DispatchSchedule, LoadProfile, PriceSeries, TimeGrid,
};
use crate::error::{Error, Result};
use crate::model::DayInputs;

pub const PRICES_HEADER: [&str; 2] = ["timestamp", "price_dkk_per_mwh"];
pub const LOAD_HEADER: [&str; 2] = ["timestamp", "load_mw"];
pub const SCHEDULE_HEADER: [&str; 8] = [
    "timestamp",
    "price_dkk_per_mwh",
    "load_mw",
    "p_ch_mw",
    "p_dis_mw",
    "p_in_mw",
    "p_out_mw",
    "soc",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Start time and spacing of an equally spaced series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    pub start: NaiveDateTime,
    pub step: TimeDelta,
    pub steps: usize,
}

impl TimeIndex {
    pub fn step_hours(&self) -> f64 {
        self.step.num_milliseconds() as f64 / 3_600_000.0
    }

    pub fn at(&self, t: usize) -> NaiveDateTime {
        self.start + self.step * t as i32
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps, self.step_hours())
    }
}

/// A schedule file read back in full.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFile {
    pub index: TimeIndex,
    pub prices: Vec<f64>,
    pub load: Vec<f64>,
    pub schedule: DispatchSchedule,
    pub p_in: Vec<f64>,
    pub p_out: Vec<f64>,
    /// End-of-step SoC.
    pub soc: Vec<f64>,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a timestamped table, checking the header and the time axis.
/// Returns the index and the numeric columns row by row.
fn read_table(path: &Path, header: &[&str]) -> Result<(TimeIndex, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;

    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut saw_header = false;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| csv_err(path, e))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if !saw_header {
            let got: Vec<&str> = record.iter().collect();
            if got != header {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
                ));
            }
            saw_header = true;
            continue;
        }
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let stamp = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(path, line, format!("invalid timestamp `{}`", &record[0])))?;
        if let Some(&prev) = stamps.last() {
            if stamp == prev {
                return Err(parse_err(path, line, format!("duplicate timestamp {}", &record[0])));
            }
            if stamp < prev {
                return Err(parse_err(path, line, format!("timestamp {} is out of order", &record[0])));
            }
            if stamps.len() >= 2 && stamp - prev != stamps[1] - stamps[0] {
                return Err(parse_err(
                    path,
                    line,
                    format!("irregular spacing at {} (missing or extra rows?)", &record[0]),
                ));
            }
        }
        let mut values = Vec::with_capacity(header.len() - 1);
        for (name, field) in header[1..].iter().zip(record.iter().skip(1)) {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("{name}: `{field}` is not a finite number")))?;
            values.push(v);
        }
        stamps.push(stamp);
        rows.push(values);
    }
    if !saw_header {
        return Err(parse_err(path, 1, "empty file"));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let step = if stamps.len() >= 2 {
        stamps[1] - stamps[0]
    } else {
        TimeDelta::minutes(30)
    };
    Ok((
        TimeIndex {
            start: stamps[0],
            step,
            steps: stamps.len(),
        },
        rows,
    ))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

pub fn parse_prices_csv(path: &Path) -> Result<(TimeIndex, PriceSeries)> {
    let (index, rows) = read_table(path, &PRICES_HEADER)?;
    Ok((index, PriceSeries::new(rows.into_iter().map(|r| r[0]).collect())?))
}

pub fn parse_load_csv(path: &Path) -> Result<(TimeIndex, LoadProfile)> {
    let (index, rows) = read_table(path, &LOAD_HEADER)?;
    Ok((index, LoadProfile::new(rows.into_iter().map(|r| r[0]).collect())?))
}

/// Reads a price file and a load file that share one time axis.
pub fn load_day(prices: &Path, load: &Path) -> Result<(TimeIndex, DayInputs)> {
    let (pi, p) = parse_prices_csv(prices)?;
    let (li, l) = parse_load_csv(load)?;
    if pi != li {
        return Err(Error::input(format!(
            "price and load files cover different time axes ({} steps from {} vs {} steps from {})",
            pi.steps, pi.start, li.steps, li.start
        )));
    }
    Ok((pi, DayInputs::new(pi.grid()?, p, l)?))
}

pub fn parse_schedule_csv(path: &Path) -> Result<ScheduleFile> {
    let (index, rows) = read_table(path, &SCHEDULE_HEADER)?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    Ok(ScheduleFile {
        index,
        prices: col(0),
        load: col(1),
        schedule: DispatchSchedule::new(col(2), col(3))?,
        p_in: col(4),
        p_out: col(5),
        soc: col(6),
    })
}

fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    index: &TimeIndex,
    columns: &[&[f64]],
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", header.join(","))?;
    for t in 0..index.steps {
        write!(w, "{}", index.at(t).format(TIMESTAMP_FORMAT))?;
        for c in columns {
            write!(w, ",{}", c[t])?;
        }
        writeln!(w)?;
    }
    w.flush()
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_prices<W: Write>(out: W, index: &TimeIndex, prices: &PriceSeries) -> std::io::Result<()> {
    write_rows(out, &PRICES_HEADER, index, &[prices.values()])
}

pub fn write_load<W: Write>(out: W, index: &TimeIndex, load: &LoadProfile) -> std::io::Result<()> {
    write_rows(out, &LOAD_HEADER, index, &[load.values()])
}

pub fn write_schedule<W: Write>(
    out: W,
    index: &TimeIndex,
    day: &DayInputs,
    bat: &BatteryParams,
    schedule: &DispatchSchedule,
) -> Result<()> {
    if schedule.len() != index.steps || day.steps() != index.steps {
        return Err(Error::input(format!(
            "schedule has {} steps, day has {}, index has {}",
            schedule.len(),
            day.steps(),
            index.steps
        )));
    }
    let exchange = crate::domain::grid_exchange(schedule, &day.load)?;
    let traj = soc_trajectory(schedule, bat, &day.grid)?;
    write_rows(
        out,
        &SCHEDULE_HEADER,
        index,
        &[
            day.prices.values(),
            day.load.values(),
            &schedule.charge_mw,
            &schedule.discharge_mw,
            &exchange.import_mw,
            &exchange.export_mw,
            &traj.values()[1..],
        ],
    )
    .map_err(|e| Error::io("<schedule output>", e))
}

pub fn write_prices_file(path: &Path, index: &TimeIndex, prices: &PriceSeries) -> Result<()> {
    write_prices(create(path)?, index, prices).map_err(|e| Error::io(path, e))
}

pub fn write_load_file(path: &Path, index: &TimeIndex, load: &LoadProfile) -> Result<()> {
    write_load(create(path)?, index, load).map_err(|e| Error::io(path, e))
}

pub fn write_schedule_file(
    path: &Path,
    index: &TimeIndex,
    day: &DayInputs,
    bat: &BatteryParams,
    schedule: &DispatchSchedule,
) -> Result<()> {
    write_schedule(create(path)?, index, day, bat, schedule).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
