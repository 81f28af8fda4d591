//! Hourly market data and futures ingestion.
//!
//! Raw rows are read from delimited text, mapped onto the local market clock
//! (Europe/Berlin), and regularized to exactly 24 hours per day: the hour lost
//! in spring is linearly interpolated, the hour repeated in autumn is averaged.
//! Futures settlements are stored per commodity and quote date and looked up
//! with a bounded carry-forward.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, LocalResult, NaiveDate, NaiveDateTime, TimeZone, Timelike};
use chrono_tz::Europe::Berlin;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact header of the hourly input file.
pub const HOURLY_HEADER: [&str; 10] = [
    "timestamp",
    "price_eur_mwh",
    "load_actual_mw",
    "load_da_fc_mw",
    "solar_actual_mw",
    "solar_da_fc_mw",
    "wind_on_actual_mw",
    "wind_on_da_fc_mw",
    "wind_off_actual_mw",
    "wind_off_da_fc_mw",
];

/// Exact header of the futures input file.
pub const FUTURES_HEADER: [&str; 4] = ["quote_date", "commodity", "maturity_months", "settle"];

/// Header of the processed (clock-adjusted) hourly file.
pub const PROCESSED_HEADER: [&str; 11] = [
    "day",
    "hour",
    "price_eur_mwh",
    "load_actual_mw",
    "load_da_fc_mw",
    "solar_actual_mw",
    "solar_da_fc_mw",
    "wind_on_actual_mw",
    "wind_on_da_fc_mw",
    "wind_off_actual_mw",
    "wind_off_da_fc_mw",
];

/// Longest run of missing non-price values that is interpolated.
pub const MAX_INTERPOLATED_GAP: usize = 3;

/// Carry-forward cap for futures lookups, in calendar days.
pub const MAX_QUOTE_AGE_DAYS: i64 = 10;

pub const MAX_MATURITY: u8 = 13;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is empty")]
    EmptyInput,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("duplicate row for {day} hour {hour}")]
    DuplicateRow { day: NaiveDate, hour: u8 },
    #[error("missing data on {day}: {message}")]
    MissingData { day: NaiveDate, message: String },
    #[error("line {line}: settle must be positive, got {settle}")]
    NonPositiveSettle { line: usize, settle: f64 },
    #[error("line {line}: maturity {maturity} outside 1..=13")]
    InvalidMaturity { line: usize, maturity: i64 },
    #[error("duplicate quote {commodity} {date} maturity {maturity}")]
    DuplicateQuote { date: NaiveDate, commodity: Commodity, maturity: u8 },
    #[error("no {commodity} quote (maturity {maturity}) within {max_age} days before {date}")]
    StaleQuote { date: NaiveDate, commodity: Commodity, maturity: u8, max_age: i64 },
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// How timestamps in the hourly file are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TzMode {
    /// Wall-clock CET/CEST times (an explicit offset, if present, is ignored
    /// for day/hour assignment).
    #[default]
    Local,
    /// UTC instants, converted to Europe/Berlin before day/hour assignment.
    Utc,
}

impl FromStr for TzMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "local" => Ok(TzMode::Local),
            "utc" => Ok(TzMode::Utc),
            other => Err(format!("unknown tz mode `{other}` (expected local|utc)")),
        }
    }
}

/// Numeric hourly columns, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Price = 0,
    LoadActual,
    LoadDaFc,
    SolarActual,
    SolarDaFc,
    WindOnActual,
    WindOnDaFc,
    WindOffActual,
    WindOffDaFc,
}

pub const N_COLUMNS: usize = 9;

impl Column {
    pub const ALL: [Column; N_COLUMNS] = [
        Column::Price,
        Column::LoadActual,
        Column::LoadDaFc,
        Column::SolarActual,
        Column::SolarDaFc,
        Column::WindOnActual,
        Column::WindOnDaFc,
        Column::WindOffActual,
        Column::WindOffDaFc,
    ];

    pub fn name(self) -> &'static str {
        HOURLY_HEADER[self as usize + 1]
    }
}

/// One parsed input row on the local market clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHourlyRow {
    pub line: usize,
    pub local_day: NaiveDate,
    /// 1..=24, local clock hour + 1.
    pub hour: u8,
    /// NaN marks an empty cell.
    pub values: [f64; N_COLUMNS],
    /// Second occurrence of an autumn repeated hour, awaiting averaging.
    pub duplicate_pending: bool,
}

/// One regularized hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyRecord {
    pub local_day: NaiveDate,
    pub hour: u8,
    pub price: f64,
    pub load_actual: f64,
    pub load_da_fc: f64,
    pub solar_actual: f64,
    pub solar_da_fc: f64,
    pub wind_on_actual: f64,
    pub wind_on_da_fc: f64,
    pub wind_off_actual: f64,
    pub wind_off_da_fc: f64,
}

impl HourlyRecord {
    pub fn res_actual(&self) -> f64 {
        self.solar_actual + self.wind_on_actual + self.wind_off_actual
    }

    pub fn res_da_fc(&self) -> f64 {
        self.solar_da_fc + self.wind_on_da_fc + self.wind_off_da_fc
    }
}

/// What kind of clock change, if any, happens on a local day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DstDay {
    None,
    /// 23-hour day; the 02:00 clock hour does not exist.
    Spring,
    /// 25-hour day; the 02:00 clock hour occurs twice.
    Autumn,
}

pub fn dst_day(day: NaiveDate) -> DstDay {
    let probe = day.and_hms_opt(2, 30, 0).expect("valid time");
    match Berlin.from_local_datetime(&probe) {
        LocalResult::None => DstDay::Spring,
        LocalResult::Ambiguous(..) => DstDay::Autumn,
        LocalResult::Single(_) => DstDay::None,
    }
}

fn parse_timestamp(raw: &str, mode: TzMode) -> std::result::Result<NaiveDateTime, String> {
    let s = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(match mode {
            TzMode::Local => dt.naive_local(),
            TzMode::Utc => dt.with_timezone(&Berlin).naive_local(),
        });
    }
    for fmt in ["%Y-%m-%dT%H:%M%:z", "%Y-%m-%d %H:%M%:z", "%Y-%m-%dT%H:%M%z", "%Y-%m-%d %H:%M%z"] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Ok(match mode {
                TzMode::Local => dt.naive_local(),
                TzMode::Utc => dt.with_timezone(&Berlin).naive_local(),
            });
        }
    }
    let trimmed = s.trim_end_matches('Z');
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(trimmed, fmt) {
            return Ok(match mode {
                TzMode::Local => naive,
                TzMode::Utc => Berlin.from_utc_datetime(&naive).naive_local(),
            });
        }
    }
    Err(format!("unparseable timestamp `{s}`"))
}

fn parse_cell(raw: &str) -> std::result::Result<f64, String> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| format!("invalid number `{s}`"))
        .and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("non-finite value `{s}`")) })
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    for name in &found {
        if !expected.contains(name) {
            return Err(IngestError::UnknownColumn((*name).to_string()));
        }
    }
    if found != expected {
        return Err(IngestError::HeaderMismatch { expected: expected.join(","), found: found.join(",") });
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(reader)
}

fn csv_error(err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        other => IngestError::Malformed { line, message: format!("{other:?}") },
    }
}

/// Parses the hourly file at `path`.
pub fn parse_hourly_csv(path: impl AsRef<Path>, tz_mode: TzMode) -> Result<Vec<RawHourlyRow>> {
    let file = std::fs::File::open(path)?;
    parse_hourly_reader(file, tz_mode)
}

pub fn parse_hourly_reader<R: Read>(reader: R, tz_mode: TzMode) -> Result<Vec<RawHourlyRow>> {
    let mut rdr = csv_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if h.is_empty() || (h.len() == 1 && h[0].is_empty()) => return Err(IngestError::EmptyInput),
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    check_header(&header, &HOURLY_HEADER)?;

    let mut rows = Vec::new();
    let mut seen: HashMap<(NaiveDate, u8), usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != HOURLY_HEADER.len() {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected {} fields, found {}", HOURLY_HEADER.len(), record.len()),
            });
        }
        let ts = parse_timestamp(&record[0], tz_mode).map_err(|message| IngestError::Malformed { line, message })?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(IngestError::Malformed { line, message: format!("timestamp {ts} is not on the hour") });
        }
        let mut values = [f64::NAN; N_COLUMNS];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse_cell(&record[i + 1]).map_err(|message| IngestError::Malformed { line, message })?;
        }
        let local_day = ts.date();
        let hour = ts.hour() as u8 + 1;
        let count = seen.entry((local_day, hour)).or_insert(0);
        *count += 1;
        let duplicate_pending = *count > 1;
        if duplicate_pending && (*count > 2 || hour != 3 || dst_day(local_day) != DstDay::Autumn) {
            return Err(IngestError::DuplicateRow { day: local_day, hour });
        }
        rows.push(RawHourlyRow { line, local_day, hour, values, duplicate_pending });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(rows)
}

/// Counts of the regularizations applied during clock-change adjustment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub spring_interpolated: usize,
    pub autumn_averaged: usize,
    pub cells_interpolated: usize,
}

/// Dense, clock-regularized hourly table: `days × 24` rows, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDataset {
    start_day: NaiveDate,
    n_days: usize,
    columns: Vec<Vec<f64>>,
    res_actual: Vec<f64>,
    res_da_fc: Vec<f64>,
    /// Bit `c` set when column `c` of a row was filled by interpolation or averaging.
    fill_mask: Vec<u16>,
}

impl HourlyDataset {
    /// Builds a dataset from complete columns. Every column must have `24 * n_days` finite entries.
    pub fn from_columns(start_day: NaiveDate, columns: Vec<Vec<f64>>, fill_mask: Option<Vec<u16>>) -> Result<Self> {
        if columns.len() != N_COLUMNS {
            return Err(IngestError::Malformed { line: 0, message: format!("expected {N_COLUMNS} columns") });
        }
        let rows = columns[0].len();
        if rows == 0 {
            return Err(IngestError::EmptyInput);
        }
        if rows % 24 != 0 || columns.iter().any(|c| c.len() != rows) {
            return Err(IngestError::Malformed { line: 0, message: "columns are not whole days of equal length".into() });
        }
        let n_days = rows / 24;
        for (c, col) in columns.iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::MissingData {
                    day: start_day + Duration::days((i / 24) as i64),
                    message: format!("{} missing at hour {}", Column::ALL[c].name(), i % 24 + 1),
                });
            }
        }
        let sum3 = |a: usize, b: usize, c: usize| -> Vec<f64> {
            (0..rows).map(|i| columns[a][i] + columns[b][i] + columns[c][i]).collect()
        };
        let res_actual = sum3(Column::SolarActual as usize, Column::WindOnActual as usize, Column::WindOffActual as usize);
        let res_da_fc = sum3(Column::SolarDaFc as usize, Column::WindOnDaFc as usize, Column::WindOffDaFc as usize);
        let fill_mask = fill_mask.unwrap_or_else(|| vec![0; rows]);
        Ok(HourlyDataset { start_day, n_days, columns, res_actual, res_da_fc, fill_mask })
    }

    pub fn start_day(&self) -> NaiveDate {
        self.start_day
    }

    pub fn end_day(&self) -> NaiveDate {
        self.start_day + Duration::days(self.n_days as i64 - 1)
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    /// Index of `day`, or `None` when outside the covered span.
    pub fn day_index(&self, day: NaiveDate) -> Option<usize> {
        let offset = (day - self.start_day).num_days();
        (offset >= 0 && (offset as usize) < self.n_days).then_some(offset as usize)
    }

    pub fn day_at(&self, index: usize) -> NaiveDate {
        self.start_day + Duration::days(index as i64)
    }

    fn row(day_index: usize, hour: u8) -> usize {
        debug_assert!((1..=24).contains(&hour));
        day_index * 24 + hour as usize - 1
    }

    pub fn value(&self, column: Column, day_index: usize, hour: u8) -> f64 {
        self.columns[column as usize][Self::row(day_index, hour)]
    }

    pub fn price(&self, day_index: usize, hour: u8) -> f64 {
        self.value(Column::Price, day_index, hour)
    }

    pub fn load_actual(&self, day_index: usize, hour: u8) -> f64 {
        self.value(Column::LoadActual, day_index, hour)
    }

    pub fn load_da_fc(&self, day_index: usize, hour: u8) -> f64 {
        self.value(Column::LoadDaFc, day_index, hour)
    }

    pub fn res_actual(&self, day_index: usize, hour: u8) -> f64 {
        self.res_actual[Self::row(day_index, hour)]
    }

    pub fn res_da_fc(&self, day_index: usize, hour: u8) -> f64 {
        self.res_da_fc[Self::row(day_index, hour)]
    }

    pub fn column(&self, column: Column) -> &[f64] {
        &self.columns[column as usize]
    }

    pub fn res_actual_column(&self) -> &[f64] {
        &self.res_actual
    }

    pub fn fill_mask(&self) -> &[u16] {
        &self.fill_mask
    }

    pub fn record(&self, day_index: usize, hour: u8) -> HourlyRecord {
        let v = |c: Column| self.value(c, day_index, hour);
        HourlyRecord {
            local_day: self.day_at(day_index),
            hour,
            price: v(Column::Price),
            load_actual: v(Column::LoadActual),
            load_da_fc: v(Column::LoadDaFc),
            solar_actual: v(Column::SolarActual),
            solar_da_fc: v(Column::SolarDaFc),
            wind_on_actual: v(Column::WindOnActual),
            wind_on_da_fc: v(Column::WindOnDaFc),
            wind_off_actual: v(Column::WindOffActual),
            wind_off_da_fc: v(Column::WindOffDaFc),
        }
    }

    /// Keeps days up to and including `last_day`.
    pub fn truncated(&self, last_day: NaiveDate) -> Option<HourlyDataset> {
        let keep = self.day_index(last_day)? + 1;
        let rows = keep * 24;
        let columns = self.columns.iter().map(|c| c[..rows].to_vec()).collect();
        HourlyDataset::from_columns(self.start_day, columns, Some(self.fill_mask[..rows].to_vec())).ok()
    }

    /// Returns a copy with `f` applied to every cell of `column` on days in `days`.
    pub fn map_column_days(
        &self,
        column: Column,
        days: std::ops::Range<usize>,
        mut f: impl FnMut(usize, u8, f64) -> f64,
    ) -> HourlyDataset {
        let mut columns = self.columns.clone();
        for d in days.start..days.end.min(self.n_days) {
            for h in 1..=24u8 {
                let r = Self::row(d, h);
                columns[column as usize][r] = f(d, h, columns[column as usize][r]);
            }
        }
        HourlyDataset::from_columns(self.start_day, columns, Some(self.fill_mask.clone()))
            .expect("mapped values must stay finite")
    }

    /// Writes the processed table (one row per day and hour).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(PROCESSED_HEADER).map_err(csv_error)?;
        for d in 0..self.n_days {
            let day = self.day_at(d).to_string();
            for h in 1..=24u8 {
                let mut rec = vec![day.clone(), h.to_string()];
                rec.extend(Column::ALL.iter().map(|&c| format!("{}", self.value(c, d, h))));
                w.write_record(&rec).map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`HourlyDataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        let header = rdr.headers().map_err(csv_error)?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(IngestError::EmptyInput);
        }
        check_header(&header, &PROCESSED_HEADER)?;
        let mut columns = vec![Vec::new(); N_COLUMNS];
        let mut start_day = None;
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let line = i + 2;
            let day = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| IngestError::Malformed { line, message: e.to_string() })?;
            let hour: u8 = record[1].parse().map_err(|_| IngestError::Malformed { line, message: "bad hour".into() })?;
            let start = *start_day.get_or_insert(day);
            let expected_row = i;
            if (day - start).num_days() as usize * 24 + hour as usize - 1 != expected_row {
                return Err(IngestError::Malformed { line, message: "rows are not a contiguous hourly grid".into() });
            }
            for c in 0..N_COLUMNS {
                let v = record[c + 2]
                    .parse::<f64>()
                    .map_err(|_| IngestError::Malformed { line, message: format!("invalid number `{}`", &record[c + 2]) })?;
                columns[c].push(v);
            }
        }
        let start_day = start_day.ok_or(IngestError::EmptyInput)?;
        HourlyDataset::from_columns(start_day, columns, None)
    }

    /// SHA-256 of the processed table, hex-encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.start_day.to_string().as_bytes());
        for col in &self.columns {
            for v in col {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Regularizes raw rows to a dense 24-hour-per-day dataset.
pub fn adjust_clock_change(raw: &[RawHourlyRow]) -> Result<(HourlyDataset, AdjustmentReport)> {
    if raw.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut by_slot: BTreeMap<(NaiveDate, u8), Vec<&RawHourlyRow>> = BTreeMap::new();
    for row in raw {
        by_slot.entry((row.local_day, row.hour)).or_default().push(row);
    }
    let start_day = by_slot.keys().next().expect("non-empty").0;
    let end_day = by_slot.keys().next_back().expect("non-empty").0;
    let n_days = (end_day - start_day).num_days() as usize + 1;
    let rows = n_days * 24;

    let mut report = AdjustmentReport::default();
    let mut columns = vec![vec![f64::NAN; rows]; N_COLUMNS];
    let mut fill_mask = vec![0u16; rows];
    let mut spring_slots = vec![false; rows];

    for d in 0..n_days {
        let day = start_day + Duration::days(d as i64);
        let kind = dst_day(day);
        let mut missing = Vec::new();
        for h in 1..=24u8 {
            let r = d * 24 + h as usize - 1;
            match by_slot.get(&(day, h)).map(Vec::as_slice) {
                None | Some([]) => missing.push(h),
                Some([one]) => {
                    for c in 0..N_COLUMNS {
                        columns[c][r] = one.values[c];
                    }
                }
                Some([first, second]) => {
                    if kind != DstDay::Autumn || h != 3 {
                        return Err(IngestError::DuplicateRow { day, hour: h });
                    }
                    for c in 0..N_COLUMNS {
                        columns[c][r] = match (first.values[c].is_nan(), second.values[c].is_nan()) {
                            (false, false) => 0.5 * (first.values[c] + second.values[c]),
                            (true, false) => second.values[c],
                            (false, true) => first.values[c],
                            (true, true) => f64::NAN,
                        };
                    }
                    fill_mask[r] = (1 << N_COLUMNS) - 1;
                    report.autumn_averaged += 1;
                }
                Some(_) => return Err(IngestError::DuplicateRow { day, hour: h }),
            }
        }
        match (kind, missing.as_slice()) {
            (_, []) => {}
            (DstDay::Spring, [h]) => {
                let r = d * 24 + *h as usize - 1;
                spring_slots[r] = true;
                report.spring_interpolated += 1;
            }
            (DstDay::Spring, _) => {
                return Err(IngestError::MissingData {
                    day,
                    message: format!("{} hours missing on a spring clock-change day", missing.len()),
                })
            }
            _ => {
                return Err(IngestError::MissingData { day, message: format!("hours {missing:?} missing") });
            }
        }
    }

    for (c, col) in columns.iter_mut().enumerate() {
        let mut i = 0;
        while i < rows {
            if !col[i].is_nan() {
                i += 1;
                continue;
            }
            let gap_start = i;
            while i < rows && col[i].is_nan() {
                i += 1;
            }
            let gap = gap_start..i;
            let all_spring = gap.clone().all(|r| spring_slots[r]);
            let day = start_day + Duration::days((gap_start / 24) as i64);
            let column = Column::ALL[c];
            if column == Column::Price && !all_spring {
                return Err(IngestError::MissingData { day, message: format!("price missing at hour {}", gap_start % 24 + 1) });
            }
            let spring_len = gap.clone().filter(|&r| spring_slots[r]).count();
            if gap.len() - spring_len > MAX_INTERPOLATED_GAP {
                return Err(IngestError::MissingData {
                    day,
                    message: format!("{} consecutive missing values in {}", gap.len(), column.name()),
                });
            }
            if gap_start == 0 || i == rows {
                return Err(IngestError::MissingData {
                    day,
                    message: format!("{} missing at the edge of the data", column.name()),
                });
            }
            let left = col[gap_start - 1];
            let right = col[i];
            let span = (gap.len() + 1) as f64;
            for (k, r) in gap.clone().enumerate() {
                let w = (k + 1) as f64 / span;
                col[r] = left + w * (right - left);
                fill_mask[r] |= 1 << c;
                if !spring_slots[r] {
                    report.cells_interpolated += 1;
                }
            }
        }
    }

    let dataset = HourlyDataset::from_columns(start_day, columns, Some(fill_mask))?;
    Ok((dataset, report))
}

/// Tradable commodities with a futures curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Commodity {
    Co2,
    Gas,
    Coal,
    Oil,
}

impl Commodity {
    pub const ALL: [Commodity; 4] = [Commodity::Co2, Commodity::Gas, Commodity::Coal, Commodity::Oil];

    pub fn as_str(self) -> &'static str {
        match self {
            Commodity::Co2 => "co2",
            Commodity::Gas => "gas",
            Commodity::Coal => "coal",
            Commodity::Oil => "oil",
        }
    }
}

impl fmt::Display for Commodity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Commodity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "co2" | "eua" => Ok(Commodity::Co2),
            "gas" => Ok(Commodity::Gas),
            "coal" => Ok(Commodity::Coal),
            "oil" => Ok(Commodity::Oil),
            other => Err(format!("unknown commodity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuturesQuote {
    pub quote_date: NaiveDate,
    pub commodity: Commodity,
    pub maturity_months: u8,
    pub settle: f64,
}

/// Settlement curves indexed by commodity and quote date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuturesStore {
    curves: BTreeMap<Commodity, BTreeMap<NaiveDate, [Option<f64>; MAX_MATURITY as usize]>>,
}

impl FuturesStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, quote: FuturesQuote) -> Result<()> {
        if !(quote.settle > 0.0) {
            return Err(IngestError::NonPositiveSettle { line: 0, settle: quote.settle });
        }
        if !(1..=MAX_MATURITY).contains(&quote.maturity_months) {
            return Err(IngestError::InvalidMaturity { line: 0, maturity: quote.maturity_months as i64 });
        }
        let curve = self.curves.entry(quote.commodity).or_default().entry(quote.quote_date).or_insert([None; 13]);
        let slot = &mut curve[quote.maturity_months as usize - 1];
        if slot.is_some() {
            return Err(IngestError::DuplicateQuote {
                date: quote.quote_date,
                commodity: quote.commodity,
                maturity: quote.maturity_months,
            });
        }
        *slot = Some(quote.settle);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.curves.values().all(BTreeMap::is_empty)
    }

    pub fn len(&self) -> usize {
        self.curves.values().flat_map(|c| c.values()).map(|c| c.iter().flatten().count()).sum()
    }

    /// Quote dates available for `commodity`, ascending.
    pub fn quote_dates(&self, commodity: Commodity) -> impl Iterator<Item = NaiveDate> + '_ {
        self.curves.get(&commodity).into_iter().flat_map(|c| c.keys().copied())
    }

    /// The curve with the latest quote date on or before `date` (within the carry-forward cap).
    pub fn curve_on_or_before(&self, date: NaiveDate, commodity: Commodity) -> Option<(NaiveDate, &[Option<f64>; 13])> {
        let curve = self.curves.get(&commodity)?;
        let (&qd, values) = curve.range(..=date).next_back()?;
        ((date - qd).num_days() <= MAX_QUOTE_AGE_DAYS).then_some((qd, values))
    }

    /// Settle of the latest quote dated on or before `date` for the given maturity.
    pub fn last_quote_on_or_before(&self, date: NaiveDate, commodity: Commodity, maturity_months: u8) -> Result<f64> {
        let stale = || IngestError::StaleQuote { date, commodity, maturity: maturity_months, max_age: MAX_QUOTE_AGE_DAYS };
        if !(1..=MAX_MATURITY).contains(&maturity_months) {
            return Err(IngestError::InvalidMaturity { line: 0, maturity: maturity_months as i64 });
        }
        let curve = self.curves.get(&commodity).ok_or_else(stale)?;
        let earliest = date - Duration::days(MAX_QUOTE_AGE_DAYS);
        curve
            .range(earliest..=date)
            .rev()
            .find_map(|(_, values)| values[maturity_months as usize - 1])
            .ok_or_else(stale)
    }

    /// Mean settle of quotes dated in `(end - days, end]` for the given maturity.
    pub fn trailing_mean(&self, end: NaiveDate, days: i64, commodity: Commodity, maturity_months: u8) -> Option<f64> {
        let curve = self.curves.get(&commodity)?;
        let start = end - Duration::days(days - 1);
        let (sum, n) = curve
            .range(start..=end)
            .filter_map(|(_, v)| v.get(maturity_months as usize - 1).copied().flatten())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = FuturesQuote> + '_ {
        self.curves.iter().flat_map(|(&commodity, curve)| {
            curve.iter().flat_map(move |(&quote_date, values)| {
                values.iter().enumerate().filter_map(move |(m, v)| {
                    v.map(|settle| FuturesQuote { quote_date, commodity, maturity_months: m as u8 + 1, settle })
                })
            })
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(FUTURES_HEADER).map_err(csv_error)?;
        for q in self.iter() {
            w.write_record([
                q.quote_date.to_string(),
                q.commodity.to_string(),
                q.maturity_months.to_string(),
                format!("{}", q.settle),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for q in self.iter() {
            hasher.update(q.quote_date.num_days_from_ce().to_le_bytes());
            hasher.update([q.commodity as u8, q.maturity_months]);
            hasher.update(q.settle.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }
}

pub fn parse_futures_csv(path: impl AsRef<Path>) -> Result<FuturesStore> {
    let file = std::fs::File::open(path)?;
    parse_futures_reader(file)
}

pub fn parse_futures_reader<R: Read>(reader: R) -> Result<FuturesStore> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::EmptyInput);
    }
    check_header(&header, &FUTURES_HEADER)?;
    let mut store = FuturesStore::new();
    let mut any = false;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let malformed = |message: String| IngestError::Malformed { line, message };
        if record.len() != FUTURES_HEADER.len() {
            return Err(malformed(format!("expected 4 fields, found {}", record.len())));
        }
        let quote_date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| malformed(e.to_string()))?;
        let commodity: Commodity = record[1].parse().map_err(malformed)?;
        let maturity: i64 = record[2].parse().map_err(|_| malformed(format!("invalid maturity `{}`", &record[2])))?;
        if !(1..=MAX_MATURITY as i64).contains(&maturity) {
            return Err(IngestError::InvalidMaturity { line, maturity });
        }
        let settle: f64 = record[3].parse().map_err(|_| malformed(format!("invalid settle `{}`", &record[3])))?;
        if !(settle > 0.0) || !settle.is_finite() {
            return Err(IngestError::NonPositiveSettle { line, settle });
        }
        store.insert(FuturesQuote { quote_date, commodity, maturity_months: maturity as u8, settle })?;
        any = true;
    }
    if !any {
        return Err(IngestError::EmptyInput);
    }
    Ok(store)
}

/// Sidecar manifest written next to a processed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub start_day: NaiveDate,
    pub end_day: NaiveDate,
    pub tz_mode: TzMode,
    pub adjustments: AdjustmentReport,
    pub hourly_sha256: String,
    pub futures_sha256: String,
}

pub const PROCESSED_HOURLY_FILE: &str = "hourly_processed.csv";
pub const PROCESSED_FUTURES_FILE: &str = "futures_processed.csv";
pub const DATASET_MANIFEST_FILE: &str = "dataset_manifest.json";

/// Persists a processed dataset and futures store into `dir`.
pub fn write_processed(
    dir: &Path,
    dataset: &HourlyDataset,
    futures: &FuturesStore,
    tz_mode: TzMode,
    adjustments: &AdjustmentReport,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    dataset.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(PROCESSED_HOURLY_FILE))?))?;
    futures.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(PROCESSED_FUTURES_FILE))?))?;
    let manifest = DatasetManifest {
        format_version: 1,
        start_day: dataset.start_day(),
        end_day: dataset.end_day(),
        tz_mode,
        adjustments: adjustments.clone(),
        hourly_sha256: dataset.content_hash(),
        futures_sha256: futures.content_hash(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| IngestError::Manifest(e.to_string()))?;
    std::fs::write(dir.join(DATASET_MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Loads a processed dataset written by [`write_processed`].
pub fn read_processed(dir: &Path) -> Result<(HourlyDataset, FuturesStore, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(DATASET_MANIFEST_FILE))?)
        .map_err(|e| IngestError::Manifest(e.to_string()))?;
    let dataset = HourlyDataset::read_csv(std::fs::File::open(dir.join(PROCESSED_HOURLY_FILE))?)?;
    let futures = parse_futures_csv(dir.join(PROCESSED_FUTURES_FILE))?;
    if dataset.content_hash() != manifest.hourly_sha256 {
        return Err(IngestError::Manifest("hourly table does not match manifest hash".into()));
    }
    Ok((dataset, futures, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        HOURLY_HEADER.join(",")
    }

    fn row(ts: &str, price: f64) -> String {
        format!("{ts},{price},50000,50100,1000,1100,2000,2100,300,310")
    }

    fn day_rows(day: &str, offset: &str, price: impl Fn(u32) -> f64) -> Vec<String> {
        (0..24).map(|h| row(&format!("{day}T{h:02}:00{offset}"), price(h + 1))).collect()
    }

    fn parse(lines: &[String]) -> Result<Vec<RawHourlyRow>> {
        let text = std::iter::once(header()).chain(lines.iter().cloned()).collect::<Vec<_>>().join("\n");
        parse_hourly_reader(text.as_bytes(), TzMode::Local)
    }

    #[test]
    fn hour_is_clock_hour_plus_one() {
        let rows = parse(&[row("2024-01-15T08:00+01:00", 75.2)]).unwrap();
        assert_eq!(rows[0].local_day, NaiveDate::from_ymd_opt(2024, 1, 15).unwrap());
        assert_eq!(rows[0].hour, 9);
        assert_eq!(rows[0].values[0], 75.2);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_hourly_reader("".as_bytes(), TzMode::Local), Err(IngestError::EmptyInput)));
        assert!(matches!(parse(&[]), Err(IngestError::EmptyInput)));
    }

    #[test]
    fn unknown_column_and_malformed_row() {
        let text = "timestamp,price_eur_mwh,foo\n";
        assert!(matches!(parse_hourly_reader(text.as_bytes(), TzMode::Local), Err(IngestError::UnknownColumn(c)) if c == "foo"));
        let err = parse(&[row("2024-01-15T08:00", 1.0), "2024-01-15T09:00,abc,1,1,1,1,1,1,1,1".into()]).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn dst_days_follow_berlin_rules() {
        assert_eq!(dst_day(NaiveDate::from_ymd_opt(2023, 3, 26).unwrap()), DstDay::Spring);
        assert_eq!(dst_day(NaiveDate::from_ymd_opt(2023, 10, 29).unwrap()), DstDay::Autumn);
        assert_eq!(dst_day(NaiveDate::from_ymd_opt(2023, 10, 28).unwrap()), DstDay::None);
    }

    #[test]
    fn autumn_duplicate_is_retained_and_flagged() {
        let rows = parse(&[row("2023-10-29T02:00+02:00", 30.0), row("2023-10-29T02:00+01:00", 50.0)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(!rows[0].duplicate_pending);
        assert!(rows[1].duplicate_pending);
        assert_eq!(rows[1].hour, 3);
    }

    #[test]
    fn utc_mode_maps_autumn_duplicate() {
        let text = format!("{}\n{}\n{}\n", header(), row("2023-10-29T00:00Z", 30.0), row("2023-10-29T01:00Z", 50.0));
        let rows = parse_hourly_reader(text.as_bytes(), TzMode::Utc).unwrap();
        assert_eq!((rows[0].hour, rows[1].hour), (3, 3));
        assert!(rows[1].duplicate_pending);
    }

    #[test]
    fn duplicate_outside_dst_is_rejected() {
        let err = parse(&[row("2023-10-28T02:00", 30.0), row("2023-10-28T02:00", 50.0)]).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateRow { hour: 3, .. }));
    }

    #[test]
    fn spring_gap_is_interpolated() {
        let mut lines = day_rows("2023-03-25", "", |h| h as f64);
        for h in 0..24u32 {
            if h == 2 {
                continue;
            }
            let price = match h + 1 {
                2 => 40.0,
                4 => 60.0,
                x => x as f64,
            };
            lines.push(row(&format!("2023-03-26T{h:02}:00"), price));
        }
        lines.extend(day_rows("2023-03-27", "", |h| h as f64));
        let (ds, report) = adjust_clock_change(&parse(&lines).unwrap()).unwrap();
        assert_eq!(ds.n_days(), 3);
        assert_eq!(ds.price(1, 3), 50.0);
        assert_eq!(report.spring_interpolated, 1);
        assert_eq!(ds.fill_mask()[24 + 2], (1 << N_COLUMNS) - 1);
    }

    #[test]
    fn autumn_duplicate_is_averaged() {
        let mut lines = Vec::new();
        for h in 0..24u32 {
            lines.push(row(&format!("2023-10-29T{h:02}:00"), if h == 2 { 30.0 } else { 1.0 }));
            if h == 2 {
                lines.push(row("2023-10-29T02:00", 50.0));
            }
        }
        let (ds, report) = adjust_clock_change(&parse(&lines).unwrap()).unwrap();
        assert_eq!(ds.price(0, 3), 40.0);
        assert_eq!(report.autumn_averaged, 1);
    }

    #[test]
    fn regular_day_is_unchanged() {
        let lines = day_rows("2024-01-15", "", |h| 10.0 * h as f64);
        let raw = parse(&lines).unwrap();
        let (ds, report) = adjust_clock_change(&raw).unwrap();
        for h in 1..=24u8 {
            assert_eq!(ds.price(0, h), 10.0 * h as f64);
        }
        assert_eq!(report, AdjustmentReport::default());
        assert_eq!(ds.res_actual(0, 1), 3300.0);
        assert_eq!(ds.res_da_fc(0, 1), 3510.0);
    }

    #[test]
    fn missing_hour_on_regular_day_is_an_error() {
        let mut lines = day_rows("2024-01-15", "", |h| h as f64);
        lines.remove(5);
        assert!(matches!(adjust_clock_change(&parse(&lines).unwrap()), Err(IngestError::MissingData { .. })));
    }

    #[test]
    fn short_gaps_in_non_price_columns_are_filled() {
        let mut lines = day_rows("2024-01-15", "", |h| h as f64);
        lines[4] = "2024-01-15T04:00,5,,50100,1000,1100,2000,2100,300,310".into();
        let (ds, report) = adjust_clock_change(&parse(&lines).unwrap()).unwrap();
        assert_eq!(ds.load_actual(0, 5), 50000.0);
        assert_eq!(report.cells_interpolated, 1);

        let mut long_gap = day_rows("2024-01-15", "", |h| h as f64);
        for i in 4..8 {
            long_gap[i] = format!("2024-01-15T{:02}:00,5,,50100,1000,1100,2000,2100,300,310", i);
        }
        assert!(matches!(adjust_clock_change(&parse(&long_gap).unwrap()), Err(IngestError::MissingData { .. })));

        let mut no_price = day_rows("2024-01-15", "", |h| h as f64);
        no_price[4] = "2024-01-15T04:00,,1,1,1,1,1,1,1,1".into();
        assert!(matches!(adjust_clock_change(&parse(&no_price).unwrap()), Err(IngestError::MissingData { .. })));
    }

    fn futures_fixture() -> FuturesStore {
        let text = "quote_date,commodity,maturity_months,settle\n\
                    2022-03-01,gas,1,98.4\n\
                    2022-03-03,gas,1,100\n\
                    2022-03-04,gas,1,101.5\n\
                    2022-03-04,gas,2,103\n";
        parse_futures_reader(text.as_bytes()).unwrap()
    }

    #[test]
    fn futures_lookup_and_carry_forward() {
        let store = futures_fixture();
        let d = |day| NaiveDate::from_ymd_opt(2022, 3, day).unwrap();
        assert_eq!(store.last_quote_on_or_before(d(1), Commodity::Gas, 1).unwrap(), 98.4);
        assert_eq!(store.last_quote_on_or_before(d(2), Commodity::Gas, 1).unwrap(), 98.4);
        // Saturday and Sunday carry Friday's settle.
        assert_eq!(store.last_quote_on_or_before(d(5), Commodity::Gas, 1).unwrap(), 101.5);
        assert_eq!(store.last_quote_on_or_before(d(6), Commodity::Gas, 2).unwrap(), 103.0);
        assert_eq!(store.last_quote_on_or_before(d(14), Commodity::Gas, 1).unwrap(), 101.5);
        assert!(matches!(store.last_quote_on_or_before(d(15), Commodity::Gas, 1), Err(IngestError::StaleQuote { .. })));
        assert!(matches!(store.last_quote_on_or_before(d(5), Commodity::Coal, 1), Err(IngestError::StaleQuote { .. })));
    }

    #[test]
    fn futures_validation() {
        let bad_maturity = "quote_date,commodity,maturity_months,settle\n2022-03-01,gas,0,98.4\n";
        assert!(matches!(parse_futures_reader(bad_maturity.as_bytes()), Err(IngestError::InvalidMaturity { maturity: 0, .. })));
        let bad_settle = "quote_date,commodity,maturity_months,settle\n2022-03-01,gas,1,-1\n";
        assert!(matches!(parse_futures_reader(bad_settle.as_bytes()), Err(IngestError::NonPositiveSettle { .. })));
        let dup = "quote_date,commodity,maturity_months,settle\n2022-03-01,gas,1,1\n2022-03-01,gas,1,2\n";
        assert!(matches!(parse_futures_reader(dup.as_bytes()), Err(IngestError::DuplicateQuote { .. })));
    }

    #[test]
    fn trailing_mean_uses_window() {
        let store = futures_fixture();
        let d = NaiveDate::from_ymd_opt(2022, 3, 4).unwrap();
        let mean = store.trailing_mean(d, 30, Commodity::Gas, 1).unwrap();
        assert!((mean - (98.4 + 100.0 + 101.5) / 3.0).abs() < 1e-12);
        assert_eq!(store.trailing_mean(d, 1, Commodity::Gas, 1), Some(101.5));
        assert_eq!(store.trailing_mean(d, 30, Commodity::Gas, 5), None);
    }
}
