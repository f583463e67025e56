//! Ingestion of dispatch intervals, the ESS facility registry and weather
//! records, plus the timestamp join that feeds the forecaster.
//!
//! All power quantities are held in MW and inertia in MWs. Parsers accept a
//! per-column scale so files published in GW / GWs can be read directly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDateTime, SecondsFormat, TimeZone};
use csv::StringRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<FixedOffset>;

/// Default join tolerance: half of a 5-minute dispatch interval.
pub const DEFAULT_JOIN_TOLERANCE_S: i64 = 300;

/// DPV floor below which intervals are considered noise-dominated.
pub const DEFAULT_DPV_FLOOR_MW: f64 = 500.0;

pub const DISPATCH_COLUMNS: [&str; 9] = [
    "timestamp",
    "load_mw",
    "dpv_mw",
    "energy_injection_mw",
    "reg_raise_mw",
    "reg_lower_mw",
    "cont_raise_mw",
    "cont_lower_mw",
    "rocof_control_mws",
];

/// Optional trailing column in dispatch files.
pub const WITHDRAWAL_COLUMN: &str = "energy_withdrawal_mw";

pub const WEATHER_COLUMNS: [&str; 7] = [
    "timestamp",
    "air_temp_c",
    "zenith_deg",
    "cloud_opacity",
    "dhi_wm2",
    "ghi_wm2",
    "wind_speed_ms",
];

pub const FACILITY_COLUMNS: [&str; 16] = [
    "facility_id",
    "fuel_type",
    "cap_reg_raise_mw",
    "cap_reg_lower_mw",
    "cap_cont_raise_mw",
    "cap_cont_lower_mw",
    "cap_rocof_mws",
    "util_reg_raise",
    "util_reg_lower",
    "util_cont_raise",
    "util_cont_lower",
    "util_rocof",
    "speed_factor_s",
    "rocof_ride_through",
    "planned_outage_h",
    "unplanned_outage_h",
];

pub const SPEED_FACTOR_RANGE_S: (f64, f64) = (0.2, 15.0);

// ---------------------------------------------------------------------------
// Timestamps and seasons

pub fn parse_timestamp(raw: &str, default_offset: FixedOffset) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts);
    }
    for fmt in [
        "%Y-%m-%dT%H:%M%:z",
        "%Y-%m-%d %H:%M:%S%:z",
        "%Y-%m-%d %H:%M%:z",
        "%Y-%m-%dT%H:%M:%S%z",
        "%Y-%m-%dT%H:%M%z",
    ] {
        if let Ok(ts) = DateTime::parse_from_str(raw, fmt) {
            return Some(ts);
        }
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return default_offset.from_local_datetime(&naive).single();
        }
    }
    None
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, false)
}

/// Southern Hemisphere meteorological seasons, keyed on local month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Summer,
    Autumn,
    Winter,
    Spring,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Summer, Season::Autumn, Season::Winter, Season::Spring];

    pub fn of(ts: &Timestamp) -> Season {
        match ts.month() {
            12 | 1 | 2 => Season::Summer,
            3..=5 => Season::Autumn,
            6..=8 => Season::Winter,
            _ => Season::Spring,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Summer => "summer",
            Season::Autumn => "autumn",
            Season::Winter => "winter",
            Season::Spring => "spring",
        }
    }
}

// ---------------------------------------------------------------------------
// Domain types

/// One market dispatch interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchInterval {
    pub timestamp: Timestamp,
    pub load_mw: f64,
    pub dpv_mw: f64,
    pub energy_injection_mw: f64,
    pub reg_raise_mw: f64,
    pub reg_lower_mw: f64,
    pub cont_raise_mw: f64,
    pub cont_lower_mw: f64,
    /// Synchronous generator inertia procured as RoCoF control (K_gen).
    pub rocof_control_mws: f64,
    pub energy_withdrawal_mw: Option<f64>,
}

impl DispatchInterval {
    /// An interval at `timestamp` with every quantity zero.
    pub fn at(timestamp: Timestamp) -> Self {
        DispatchInterval {
            timestamp,
            load_mw: 0.0,
            dpv_mw: 0.0,
            energy_injection_mw: 0.0,
            reg_raise_mw: 0.0,
            reg_lower_mw: 0.0,
            cont_raise_mw: 0.0,
            cont_lower_mw: 0.0,
            rocof_control_mws: 0.0,
            energy_withdrawal_mw: None,
        }
    }

    /// Contingency Raise + Regulation Raise.
    pub fn ess_raise_mw(&self) -> f64 {
        self.cont_raise_mw + self.reg_raise_mw
    }

    /// Contingency Lower + Regulation Lower.
    pub fn ess_lower_mw(&self) -> f64 {
        self.cont_lower_mw + self.reg_lower_mw
    }

    fn quantities(&self) -> [(&'static str, f64); 8] {
        [
            ("load_mw", self.load_mw),
            ("dpv_mw", self.dpv_mw),
            ("energy_injection_mw", self.energy_injection_mw),
            ("reg_raise_mw", self.reg_raise_mw),
            ("reg_lower_mw", self.reg_lower_mw),
            ("cont_raise_mw", self.cont_raise_mw),
            ("cont_lower_mw", self.cont_lower_mw),
            ("rocof_control_mws", self.rocof_control_mws),
        ]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in self.quantities() {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(w) = self.energy_withdrawal_mw {
            if !w.is_finite() || w < 0.0 {
                return Err(format!(
                    "energy_withdrawal_mw must be finite and non-negative, got {w}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuelType {
    Gas,
    Coal,
    Distillate,
    Battery,
    Unknown,
}

impl FuelType {
    pub fn parse(raw: &str) -> Option<FuelType> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "gas" => Some(FuelType::Gas),
            "coal" => Some(FuelType::Coal),
            "distillate" => Some(FuelType::Distillate),
            "battery" => Some(FuelType::Battery),
            "" | "unknown" => Some(FuelType::Unknown),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FuelType::Gas => "gas",
            FuelType::Coal => "coal",
            FuelType::Distillate => "distillate",
            FuelType::Battery => "battery",
            FuelType::Unknown => "unknown",
        }
    }
}

/// Per-service utilization over the registry period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub reg_raise: Option<f64>,
    pub reg_lower: Option<f64>,
    pub cont_raise: Option<f64>,
    pub cont_lower: Option<f64>,
    pub rocof: Option<f64>,
}

impl Utilization {
    fn values(&self) -> [Option<f64>; 5] {
        [
            self.reg_raise,
            self.reg_lower,
            self.cont_raise,
            self.cont_lower,
            self.rocof,
        ]
    }
}

/// One row of the ESS facility registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityRecord {
    pub facility_id: String,
    pub fuel_type: FuelType,
    pub cap_reg_raise_mw: f64,
    pub cap_reg_lower_mw: f64,
    pub cap_cont_raise_mw: f64,
    pub cap_cont_lower_mw: f64,
    pub cap_rocof_mws: f64,
    /// Contingency response time constant; absent for facilities without one.
    pub speed_factor_s: Option<f64>,
    pub rocof_ride_through: f64,
    pub planned_outage_h: f64,
    pub unplanned_outage_h: f64,
    pub utilization: Utilization,
}

impl FacilityRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let non_negative = [
            ("cap_reg_raise_mw", self.cap_reg_raise_mw),
            ("cap_reg_lower_mw", self.cap_reg_lower_mw),
            ("cap_cont_raise_mw", self.cap_cont_raise_mw),
            ("cap_cont_lower_mw", self.cap_cont_lower_mw),
            ("cap_rocof_mws", self.cap_rocof_mws),
            ("rocof_ride_through", self.rocof_ride_through),
            ("planned_outage_h", self.planned_outage_h),
            ("unplanned_outage_h", self.unplanned_outage_h),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(tau) = self.speed_factor_s {
            let (lo, hi) = SPEED_FACTOR_RANGE_S;
            if !(lo..=hi).contains(&tau) {
                return Err(format!("speed factor {tau} s outside [{lo}, {hi}]"));
            }
        }
        for u in self.utilization.values().into_iter().flatten() {
            if !(0.0..=1.0).contains(&u) {
                return Err(format!("utilization {u} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Direction of a frequency-control service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Raise,
    Lower,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Raise => "raise",
            Direction::Lower => "lower",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raise" => Ok(Direction::Raise),
            "lower" => Ok(Direction::Lower),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

/// Capacity-weighted mean speed factor of the contingency facilities in
/// `direction`. Facilities without a speed factor or without capacity in
/// that direction are ignored.
pub fn capacity_weighted_speed_factor(
    facilities: &[FacilityRecord],
    direction: Direction,
) -> Option<f64> {
    let (num, den) = facilities
        .iter()
        .filter_map(|f| {
            let cap = match direction {
                Direction::Raise => f.cap_cont_raise_mw,
                Direction::Lower => f.cap_cont_lower_mw,
            };
            f.speed_factor_s.filter(|_| cap > 0.0).map(|tau| (tau, cap))
        })
        .fold((0.0, 0.0), |(n, d), (tau, cap)| (n + tau * cap, d + cap));
    (den > 0.0).then(|| num / den)
}

/// Registry totals per service, as in the summary row of a facility table.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegistryTotals {
    pub reg_raise_mw: f64,
    pub reg_lower_mw: f64,
    pub cont_raise_mw: f64,
    pub cont_lower_mw: f64,
    pub rocof_mws: f64,
    pub planned_outage_h: f64,
    pub unplanned_outage_h: f64,
}

pub fn registry_totals(facilities: &[FacilityRecord]) -> RegistryTotals {
    facilities.iter().fold(RegistryTotals::default(), |mut t, f| {
        t.reg_raise_mw += f.cap_reg_raise_mw;
        t.reg_lower_mw += f.cap_reg_lower_mw;
        t.cont_raise_mw += f.cap_cont_raise_mw;
        t.cont_lower_mw += f.cap_cont_lower_mw;
        t.rocof_mws += f.cap_rocof_mws;
        t.planned_outage_h += f.planned_outage_h;
        t.unplanned_outage_h += f.unplanned_outage_h;
        t
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: Timestamp,
    pub air_temp_c: f64,
    pub zenith_deg: f64,
    /// Stored as a fraction in [0, 1] regardless of the file's unit.
    pub cloud_opacity: f64,
    pub dhi_wm2: f64,
    pub ghi_wm2: f64,
    pub wind_speed_ms: f64,
}

impl WeatherRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.air_temp_c.is_finite() {
            return Err("air_temp_c must be finite".into());
        }
        if !(0.0..=180.0).contains(&self.zenith_deg) {
            return Err(format!("zenith {} outside [0, 180]", self.zenith_deg));
        }
        if !(0.0..=1.0).contains(&self.cloud_opacity) {
            return Err(format!(
                "cloud opacity {} outside [0, 1]",
                self.cloud_opacity
            ));
        }
        for (name, v) in [
            ("dhi_wm2", self.dhi_wm2),
            ("ghi_wm2", self.ghi_wm2),
            ("wind_speed_ms", self.wind_speed_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedInterval {
    pub dispatch: DispatchInterval,
    pub weather: WeatherRecord,
}

// ---------------------------------------------------------------------------
// Schemas

/// Multiplier from a file unit to MW (or MWs for inertia columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scale {
    #[default]
    Mega,
    Giga,
}

impl Scale {
    pub fn factor(self) -> f64 {
        match self {
            Scale::Mega => 1.0,
            Scale::Giga => 1000.0,
        }
    }
}

/// Column-name and unit mapping for dispatch files. Keys are the canonical
/// column names in [`DISPATCH_COLUMNS`].
#[derive(Debug, Clone)]
pub struct DispatchSchema {
    names: BTreeMap<&'static str, String>,
    scales: BTreeMap<&'static str, Scale>,
    pub default_offset: FixedOffset,
}

impl Default for DispatchSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

impl DispatchSchema {
    pub fn canonical() -> Self {
        DispatchSchema {
            names: DISPATCH_COLUMNS
                .iter()
                .map(|c| (*c, (*c).to_string()))
                .collect(),
            scales: BTreeMap::new(),
            default_offset: FixedOffset::east_opt(0).unwrap(),
        }
    }

    /// Map canonical `field` to a differently named column in the file.
    pub fn rename(mut self, field: &str, column: impl Into<String>) -> Result<Self> {
        let key = canonical_key(field)?;
        self.names.insert(key, column.into());
        Ok(self)
    }

    pub fn scale(mut self, field: &str, scale: Scale) -> Result<Self> {
        let key = canonical_key(field)?;
        if key == "timestamp" {
            return Err(Error::Config("timestamp has no unit".into()));
        }
        self.scales.insert(key, scale);
        Ok(self)
    }

    pub fn with_default_offset(mut self, offset: FixedOffset) -> Self {
        self.default_offset = offset;
        self
    }

    fn column(&self, field: &str) -> &str {
        &self.names[field]
    }

    fn factor(&self, field: &str) -> f64 {
        self.scales.get(field).copied().unwrap_or_default().factor()
    }
}

fn canonical_key(field: &str) -> Result<&'static str> {
    DISPATCH_COLUMNS
        .iter()
        .find(|c| **c == field)
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown dispatch field `{field}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OpacityUnit {
    #[default]
    Fraction,
    Percent,
}

#[derive(Debug, Clone, Copy)]
pub struct WeatherSchema {
    pub cloud_unit: OpacityUnit,
    pub default_offset: FixedOffset,
}

impl Default for WeatherSchema {
    fn default() -> Self {
        WeatherSchema {
            cloud_unit: OpacityUnit::Fraction,
            default_offset: FixedOffset::east_opt(0).unwrap(),
        }
    }
}

// ---------------------------------------------------------------------------
// Row-level helpers

struct Header {
    index: BTreeMap<String, usize>,
}

impl Header {
    fn new(record: &StringRecord) -> Self {
        Header {
            index: record
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_string(), i))
                .collect(),
        }
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

fn row_number(record: &StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn cell(record: &StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("").trim()
}

fn parse_number(record: &StringRecord, idx: usize, column: &str) -> Result<f64> {
    let raw = cell(record, idx);
    raw.parse::<f64>().map_err(|e| Error::Parse {
        row: row_number(record),
        column: column.to_string(),
        value: raw.to_string(),
        reason: e.to_string(),
    })
}

fn parse_optional_number(record: &StringRecord, idx: usize, column: &str) -> Result<Option<f64>> {
    if cell(record, idx).is_empty() {
        Ok(None)
    } else {
        parse_number(record, idx, column).map(Some)
    }
}

fn parse_ts(record: &StringRecord, idx: usize, column: &str, offset: FixedOffset) -> Result<Timestamp> {
    let raw = cell(record, idx);
    parse_timestamp(raw, offset).ok_or_else(|| Error::Parse {
        row: row_number(record),
        column: column.to_string(),
        value: raw.to_string(),
        reason: "unrecognised timestamp".into(),
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_monotone(stamps: &[(u64, Timestamp)]) -> Result<()> {
    for pair in stamps.windows(2) {
        let (r0, t0) = pair[0];
        let (r1, t1) = pair[1];
        if t1 <= t0 {
            return Err(Error::NonMonotone {
                first_row: r0,
                first: format_timestamp(&t0),
                second_row: r1,
                second: format_timestamp(&t1),
            });
        }
    }
    Ok(())
}

/// A data row rejected during lenient ingestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRejection {
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub rejected: Vec<RowRejection>,
}

impl<T> Default for Ingested<T> {
    fn default() -> Self {
        Ingested {
            records: Vec::new(),
            rejected: Vec::new(),
        }
    }
}

impl<T> Ingested<T> {
    /// Turn the first rejection (if any) into an error.
    pub fn strict(self) -> Result<Vec<T>> {
        match self.rejected.into_iter().next() {
            None => Ok(self.records),
            Some(r) => Err(Error::Invariant {
                row: r.row,
                reason: r.reason,
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Dispatch

fn dispatch_row(
    record: &StringRecord,
    cols: &[usize; 9],
    withdrawal: Option<usize>,
    schema: &DispatchSchema,
) -> Result<DispatchInterval> {
    let ts = parse_ts(record, cols[0], schema.column("timestamp"), schema.default_offset)?;
    let mut q = [0.0; 8];
    for (k, slot) in q.iter_mut().enumerate() {
        let field = DISPATCH_COLUMNS[k + 1];
        let raw = cell(record, cols[k + 1]);
        if raw.is_empty() {
            return Err(Error::Invariant {
                row: row_number(record),
                reason: format!("missing value for `{}`", schema.column(field)),
            });
        }
        *slot = parse_number(record, cols[k + 1], schema.column(field))? * schema.factor(field);
    }
    let energy_withdrawal_mw = match withdrawal {
        Some(idx) => parse_optional_number(record, idx, WITHDRAWAL_COLUMN)?,
        None => None,
    };
    let interval = DispatchInterval {
        timestamp: ts,
        load_mw: q[0],
        dpv_mw: q[1],
        energy_injection_mw: q[2],
        reg_raise_mw: q[3],
        reg_lower_mw: q[4],
        cont_raise_mw: q[5],
        cont_lower_mw: q[6],
        rocof_control_mws: q[7],
        energy_withdrawal_mw,
    };
    interval.validate().map_err(|reason| Error::Invariant {
        row: row_number(record),
        reason,
    })?;
    Ok(interval)
}

/// Read dispatch intervals, collecting per-row rejections instead of
/// failing on them. Structural problems (missing columns, timestamps out of
/// order among accepted rows) still fail.
pub fn read_dispatch<R: Read>(reader: R, schema: &DispatchSchema) -> Result<Ingested<DispatchInterval>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let mut cols = [0usize; 9];
    for (slot, field) in cols.iter_mut().zip(DISPATCH_COLUMNS) {
        *slot = header.require(schema.column(field))?;
    }
    let withdrawal = header.optional(WITHDRAWAL_COLUMN);

    let mut out = Ingested::default();
    let mut stamps = Vec::new();
    for record in rdr.records() {
        let record = record?;
        match dispatch_row(&record, &cols, withdrawal, schema) {
            Ok(interval) => {
                stamps.push((row_number(&record), interval.timestamp));
                out.records.push(interval);
            }
            Err(Error::Invariant { row, reason }) => out.rejected.push(RowRejection { row, reason }),
            Err(e @ Error::Parse { .. }) => {
                let row = row_number(&record);
                out.rejected.push(RowRejection {
                    row,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    check_monotone(&stamps)?;
    Ok(out)
}

/// Parse a dispatch CSV; any invalid row is an error carrying its row number.
pub fn parse_dispatch_csv(path: impl AsRef<Path>, schema: &DispatchSchema) -> Result<Vec<DispatchInterval>> {
    read_dispatch(open(path.as_ref())?, schema)?.strict()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn dispatch_fields(d: &DispatchInterval) -> Vec<String> {
    vec![
        format_timestamp(&d.timestamp),
        d.load_mw.to_string(),
        d.dpv_mw.to_string(),
        d.energy_injection_mw.to_string(),
        d.reg_raise_mw.to_string(),
        d.reg_lower_mw.to_string(),
        d.cont_raise_mw.to_string(),
        d.cont_lower_mw.to_string(),
        d.rocof_control_mws.to_string(),
        fmt_opt(d.energy_withdrawal_mw),
    ]
}

/// Write dispatch intervals in the canonical schema (MW / MWs).
pub fn write_dispatch_csv<W: Write>(writer: W, records: &[DispatchInterval]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = DISPATCH_COLUMNS.to_vec();
    header.push(WITHDRAWAL_COLUMN);
    w.write_record(&header)?;
    for d in records {
        w.write_record(dispatch_fields(d))?;
    }
    w.flush().map_err(|e| Error::io("<dispatch output>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Facilities

pub fn read_facilities<R: Read>(reader: R) -> Result<Vec<FacilityRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let mut cols = [0usize; 16];
    for (slot, name) in cols.iter_mut().zip(FACILITY_COLUMNS) {
        *slot = header.require(name)?;
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = row_number(&record);
        let num = |k: usize| -> Result<f64> {
            Ok(parse_optional_number(&record, cols[k], FACILITY_COLUMNS[k])?.unwrap_or(0.0))
        };
        let opt = |k: usize| parse_optional_number(&record, cols[k], FACILITY_COLUMNS[k]);
        let fuel_raw = cell(&record, cols[1]);
        let fuel_type = FuelType::parse(fuel_raw).ok_or_else(|| Error::Parse {
            row,
            column: "fuel_type".into(),
            value: fuel_raw.to_string(),
            reason: "unknown fuel type".into(),
        })?;
        let facility = FacilityRecord {
            facility_id: cell(&record, cols[0]).to_string(),
            fuel_type,
            cap_reg_raise_mw: num(2)?,
            cap_reg_lower_mw: num(3)?,
            cap_cont_raise_mw: num(4)?,
            cap_cont_lower_mw: num(5)?,
            cap_rocof_mws: num(6)?,
            utilization: Utilization {
                reg_raise: opt(7)?,
                reg_lower: opt(8)?,
                cont_raise: opt(9)?,
                cont_lower: opt(10)?,
                rocof: opt(11)?,
            },
            speed_factor_s: opt(12)?,
            rocof_ride_through: num(13)?,
            planned_outage_h: num(14)?,
            unplanned_outage_h: num(15)?,
        };
        facility
            .validate()
            .map_err(|reason| Error::Invariant { row, reason })?;
        out.push(facility);
    }
    Ok(out)
}

/// Parse the facility registry. Blank capacity cells read as zero, a blank
/// speed factor as absent.
pub fn parse_facility_csv(path: impl AsRef<Path>) -> Result<Vec<FacilityRecord>> {
    read_facilities(open(path.as_ref())?)
}

pub fn write_facility_csv<W: Write>(writer: W, records: &[FacilityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FACILITY_COLUMNS)?;
    for f in records {
        let u = f.utilization;
        w.write_record([
            f.facility_id.clone(),
            f.fuel_type.name().to_string(),
            f.cap_reg_raise_mw.to_string(),
            f.cap_reg_lower_mw.to_string(),
            f.cap_cont_raise_mw.to_string(),
            f.cap_cont_lower_mw.to_string(),
            f.cap_rocof_mws.to_string(),
            fmt_opt(u.reg_raise),
            fmt_opt(u.reg_lower),
            fmt_opt(u.cont_raise),
            fmt_opt(u.cont_lower),
            fmt_opt(u.rocof),
            fmt_opt(f.speed_factor_s),
            f.rocof_ride_through.to_string(),
            f.planned_outage_h.to_string(),
            f.unplanned_outage_h.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<facility output>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Weather

fn weather_row(record: &StringRecord, cols: &[usize], schema: &WeatherSchema, prefix: &str) -> Result<WeatherRecord> {
    let name = |k: usize| format!("{prefix}{}", WEATHER_COLUMNS[k]);
    let timestamp = parse_ts(record, cols[0], &name(0), schema.default_offset)?;
    let n = |k: usize| parse_number(record, cols[k], &name(k));
    let opacity = n(3)?;
    let cloud_opacity = match schema.cloud_unit {
        OpacityUnit::Fraction => opacity,
        OpacityUnit::Percent => opacity / 100.0,
    };
    let w = WeatherRecord {
        timestamp,
        air_temp_c: n(1)?,
        zenith_deg: n(2)?,
        cloud_opacity,
        dhi_wm2: n(4)?,
        ghi_wm2: n(5)?,
        wind_speed_ms: n(6)?,
    };
    w.validate().map_err(|reason| Error::Invariant {
        row: row_number(record),
        reason,
    })?;
    Ok(w)
}

pub fn read_weather<R: Read>(reader: R, schema: &WeatherSchema) -> Result<Ingested<WeatherRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let cols = WEATHER_COLUMNS
        .iter()
        .map(|c| header.require(c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Ingested::default();
    let mut stamps = Vec::new();
    for record in rdr.records() {
        let record = record?;
        match weather_row(&record, &cols, schema, "") {
            Ok(w) => {
                stamps.push((row_number(&record), w.timestamp));
                out.records.push(w);
            }
            Err(e @ (Error::Invariant { .. } | Error::Parse { .. })) => out.rejected.push(RowRejection {
                row: row_number(&record),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    check_monotone(&stamps)?;
    Ok(out)
}

pub fn parse_weather_csv(path: impl AsRef<Path>, schema: &WeatherSchema) -> Result<Vec<WeatherRecord>> {
    read_weather(open(path.as_ref())?, schema)?.strict()
}

fn weather_fields(w: &WeatherRecord) -> [String; 7] {
    [
        format_timestamp(&w.timestamp),
        w.air_temp_c.to_string(),
        w.zenith_deg.to_string(),
        w.cloud_opacity.to_string(),
        w.dhi_wm2.to_string(),
        w.ghi_wm2.to_string(),
        w.wind_speed_ms.to_string(),
    ]
}

pub fn write_weather_csv<W: Write>(writer: W, records: &[WeatherRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(WEATHER_COLUMNS)?;
    for r in records {
        w.write_record(weather_fields(r))?;
    }
    w.flush().map_err(|e| Error::io("<weather output>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Joined records

const WEATHER_PREFIX: &str = "weather_";

/// Joined files carry the dispatch columns followed by the weather columns
/// prefixed with `weather_` (so `weather_timestamp`, `weather_air_temp_c`, ...).
pub fn write_joined_csv<W: Write>(writer: W, records: &[JoinedInterval]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = DISPATCH_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push(WITHDRAWAL_COLUMN.into());
    header.extend(WEATHER_COLUMNS.iter().map(|c| format!("{WEATHER_PREFIX}{c}")));
    w.write_record(&header)?;
    for j in records {
        let mut row = dispatch_fields(&j.dispatch);
        row.extend(weather_fields(&j.weather));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io("<joined output>", e))?;
    Ok(())
}

pub fn read_joined<R: Read>(reader: R) -> Result<Vec<JoinedInterval>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let schema = DispatchSchema::canonical();
    let mut dcols = [0usize; 9];
    for (slot, field) in dcols.iter_mut().zip(DISPATCH_COLUMNS) {
        *slot = header.require(field)?;
    }
    let withdrawal = header.optional(WITHDRAWAL_COLUMN);
    let wcols = WEATHER_COLUMNS
        .iter()
        .map(|c| header.require(&format!("{WEATHER_PREFIX}{c}")))
        .collect::<Result<Vec<_>>>()?;
    let wschema = WeatherSchema::default();
    let mut out = Vec::new();
    let mut stamps = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let dispatch = dispatch_row(&record, &dcols, withdrawal, &schema)?;
        let weather = weather_row(&record, &wcols, &wschema, WEATHER_PREFIX)?;
        stamps.push((row_number(&record), dispatch.timestamp));
        out.push(JoinedInterval { dispatch, weather });
    }
    check_monotone(&stamps)?;
    Ok(out)
}

pub fn parse_joined_csv(path: impl AsRef<Path>) -> Result<Vec<JoinedInterval>> {
    read_joined(open(path.as_ref())?)
}

#[derive(Debug, Clone, Default)]
pub struct JoinOutcome {
    pub joined: Vec<JoinedInterval>,
    pub omitted: usize,
}

/// Pair each dispatch interval with the nearest weather record within
/// `tolerance_s`. Both inputs must be sorted by timestamp. Ties between an
/// earlier and a later weather record go to the earlier one.
pub fn join_records(dispatch: &[DispatchInterval], weather: &[WeatherRecord], tolerance_s: i64) -> JoinOutcome {
    let mut out = JoinOutcome::default();
    let mut j = 0usize;
    for d in dispatch {
        let t = d.timestamp.timestamp();
        while j + 1 < weather.len() && weather[j + 1].timestamp.timestamp() <= t {
            j += 1;
        }
        let best = [j, j + 1]
            .into_iter()
            .filter(|&k| k < weather.len())
            .map(|k| (k, (weather[k].timestamp.timestamp() - t).abs()))
            .min_by_key(|&(k, gap)| (gap, k));
        match best {
            Some((k, gap)) if gap <= tolerance_s => out.joined.push(JoinedInterval {
                dispatch: d.clone(),
                weather: weather[k].clone(),
            }),
            _ => out.omitted += 1,
        }
    }
    out
}

/// Keep records whose DPV is at least `threshold_mw`, preserving order.
pub fn filter_min_dpv(records: &[JoinedInterval], threshold_mw: f64) -> Vec<JoinedInterval> {
    records
        .iter()
        .filter(|r| r.dispatch.dpv_mw >= threshold_mw)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "timestamp,load_mw,dpv_mw,energy_injection_mw,reg_raise_mw,reg_lower_mw,cont_raise_mw,cont_lower_mw,rocof_control_mws\n";

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s, FixedOffset::east_opt(8 * 3600).unwrap()).unwrap()
    }

    fn read(body: &str) -> Result<Vec<DispatchInterval>> {
        read_dispatch(format!("{HEADER}{body}").as_bytes(), &DispatchSchema::canonical())?.strict()
    }

    #[test]
    fn parses_reference_row() {
        let rows = read("2023-12-09T11:00+08:00,2670,1930,900,60,50,160,120,6400\n").unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.load_mw, 2670.0);
        assert_eq!(r.dpv_mw, 1930.0);
        assert_eq!(r.rocof_control_mws, 6400.0);
        assert_eq!(r.ess_raise_mw(), 220.0);
        assert_eq!(r.timestamp.offset().local_minus_utc(), 8 * 3600);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn negative_load_rejected() {
        let err = read("2023-12-09T11:00+08:00,-5,1930,900,60,50,160,120,6400\n").unwrap_err();
        match err {
            Error::Invariant { row, reason } => {
                assert_eq!(row, 2);
                assert!(reason.contains("load_mw"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_ess_cell_rejected() {
        let err = read("2023-12-09T11:00+08:00,2670,1930,900,,50,160,120,6400\n").unwrap_err();
        assert!(matches!(err, Error::Invariant { row: 2, .. }));
    }

    #[test]
    fn missing_column_named() {
        let err = read_dispatch("timestamp,load_mw\n".as_bytes(), &DispatchSchema::canonical()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "dpv_mw"));
    }

    #[test]
    fn bad_number_reports_row_and_column() {
        let ingested = read_dispatch(
            format!("{HEADER}2023-12-09T11:00+08:00,abc,1930,900,60,50,160,120,6400\n").as_bytes(),
            &DispatchSchema::canonical(),
        )
        .unwrap();
        assert_eq!(ingested.rejected.len(), 1);
        assert_eq!(ingested.rejected[0].row, 2);
        assert!(ingested.rejected[0].reason.contains("load_mw"));
    }

    #[test]
    fn non_monotone_timestamps_fail() {
        let err = read(
            "2023-12-09T11:30+08:00,1,1,1,1,1,1,1,1\n2023-12-09T11:00+08:00,1,1,1,1,1,1,1,1\n",
        )
        .unwrap_err();
        match err {
            Error::NonMonotone { first_row, second_row, .. } => {
                assert_eq!((first_row, second_row), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gigawatt_columns_scaled() {
        let schema = DispatchSchema::canonical()
            .rename("load_mw", "Load (GW)")
            .unwrap()
            .scale("load_mw", Scale::Giga)
            .unwrap()
            .scale("dpv_mw", Scale::Giga)
            .unwrap();
        let csv = "timestamp,Load (GW),dpv_mw,energy_injection_mw,reg_raise_mw,reg_lower_mw,cont_raise_mw,cont_lower_mw,rocof_control_mws\n2023-12-09 11:00,2.67,1.93,0,0,0,0,0,6400\n";
        let rows = read_dispatch(csv.as_bytes(), &schema).unwrap().strict().unwrap();
        assert!((rows[0].load_mw - 2670.0).abs() < 1e-9);
        assert!((rows[0].dpv_mw - 1930.0).abs() < 1e-9);
    }

    const FACILITY_HEADER: &str = "facility_id,fuel_type,cap_reg_raise_mw,cap_reg_lower_mw,cap_cont_raise_mw,cap_cont_lower_mw,cap_rocof_mws,util_reg_raise,util_reg_lower,util_cont_raise,util_cont_lower,util_rocof,speed_factor_s,rocof_ride_through,planned_outage_h,unplanned_outage_h\n";

    #[test]
    fn facility_rows() {
        let body = "Facility 2,Gas,30,30,6,65,1085,0.02,0.58,0.47,0.31,0.91,6,0.25,6780,3477\n\
                    Facility 13,Battery,100,100,50,50,,0.16,0.34,0.32,0.13,,0.5,0.25,2217,3585\n\
                    Facility 1,Gas,30,30,,58,1085,0.02,0.45,0.25,,0.77,,0.25,3320,2383\n";
        let f = read_facilities(format!("{FACILITY_HEADER}{body}").as_bytes()).unwrap();
        assert_eq!(f[0].fuel_type, FuelType::Gas);
        assert_eq!(f[0].cap_cont_lower_mw, 65.0);
        assert_eq!(f[0].speed_factor_s, Some(6.0));
        assert_eq!(f[1].fuel_type, FuelType::Battery);
        assert_eq!(f[1].cap_reg_raise_mw, 100.0);
        assert_eq!(f[1].cap_cont_raise_mw, 50.0);
        assert_eq!(f[1].cap_rocof_mws, 0.0);
        assert_eq!(f[1].speed_factor_s, Some(0.5));
        assert_eq!(f[2].cap_cont_raise_mw, 0.0);
        assert_eq!(f[2].speed_factor_s, None);
    }

    #[test]
    fn facility_speed_factor_out_of_range() {
        let body = "F,Gas,30,30,6,65,1085,,,,,,20,0.25,0,0\n";
        let err = read_facilities(format!("{FACILITY_HEADER}{body}").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }));
    }

    #[test]
    fn facility_negative_capacity() {
        let body = "F,Gas,-1,30,6,65,1085,,,,,,6,0.25,0,0\n";
        assert!(read_facilities(format!("{FACILITY_HEADER}{body}").as_bytes()).is_err());
    }

    #[test]
    fn weighted_speed_factor() {
        let body = "A,Gas,0,0,10,0,0,,,,,,2,0,0,0\nB,Coal,0,0,30,5,0,,,,,,6,0,0,0\nC,Gas,0,0,50,0,0,,,,,,,0,0,0\n";
        let f = read_facilities(format!("{FACILITY_HEADER}{body}").as_bytes()).unwrap();
        let tau = capacity_weighted_speed_factor(&f, Direction::Raise).unwrap();
        assert!((tau - (2.0 * 10.0 + 6.0 * 30.0) / 40.0).abs() < 1e-12);
        assert_eq!(capacity_weighted_speed_factor(&f, Direction::Lower), Some(6.0));
    }

    #[test]
    fn weather_percent_opacity() {
        let csv = "timestamp,air_temp_c,zenith_deg,cloud_opacity,dhi_wm2,ghi_wm2,wind_speed_ms\n2023-12-09T11:00+08:00,31,20,45,100,900,4\n";
        let schema = WeatherSchema {
            cloud_unit: OpacityUnit::Percent,
            ..Default::default()
        };
        let w = read_weather(csv.as_bytes(), &schema).unwrap().strict().unwrap();
        assert!((w[0].cloud_opacity - 0.45).abs() < 1e-12);
    }

    #[test]
    fn southern_seasons() {
        assert_eq!(Season::of(&ts("2023-12-09T11:00")), Season::Summer);
        assert_eq!(Season::of(&ts("2023-07-01T11:00")), Season::Winter);
        assert_eq!(Season::of(&ts("2023-10-17T11:00")), Season::Spring);
        assert_eq!(Season::of(&ts("2023-04-17T11:00")), Season::Autumn);
    }

    fn dispatch_at(stamps: &[&str]) -> Vec<DispatchInterval> {
        stamps.iter().map(|s| DispatchInterval::at(ts(s))).collect()
    }

    fn weather_at(stamps: &[&str]) -> Vec<WeatherRecord> {
        stamps
            .iter()
            .map(|s| WeatherRecord {
                timestamp: ts(s),
                air_temp_c: 20.0,
                zenith_deg: 30.0,
                cloud_opacity: 0.1,
                dhi_wm2: 100.0,
                ghi_wm2: 800.0,
                wind_speed_ms: 3.0,
            })
            .collect()
    }

    #[test]
    fn join_exact_alignment() {
        let stamps = ["2023-12-09T11:00", "2023-12-09T11:30", "2023-12-09T12:00"];
        let out = join_records(&dispatch_at(&stamps), &weather_at(&stamps), 300);
        assert_eq!(out.joined.len(), 3);
        assert_eq!(out.omitted, 0);
    }

    #[test]
    fn join_outside_tolerance_omits() {
        let d = ["2023-12-09T11:00", "2023-12-09T11:30", "2023-12-09T12:00"];
        let w = ["2023-12-09T11:10", "2023-12-09T11:40", "2023-12-09T12:10"];
        let out = join_records(&dispatch_at(&d), &weather_at(&w), 300);
        assert!(out.joined.is_empty());
        assert_eq!(out.omitted, 3);
    }

    #[test]
    fn join_within_tolerance_nearest() {
        let d = ["2023-12-09T11:00", "2023-12-09T11:30", "2023-12-09T12:00"];
        let w = ["2023-12-09T11:02", "2023-12-09T11:32", "2023-12-09T12:02"];
        let out = join_records(&dispatch_at(&d), &weather_at(&w), 300);
        assert_eq!(out.omitted, 0);
        for (j, expect) in out.joined.iter().zip(w) {
            assert_eq!(j.weather.timestamp, ts(expect));
        }
    }

    #[test]
    fn filter_threshold() {
        let stamps = ["2023-12-09T11:00", "2023-12-09T11:30", "2023-12-09T12:00"];
        let mut joined = join_records(&dispatch_at(&stamps), &weather_at(&stamps), 0).joined;
        for (j, dpv) in joined.iter_mut().zip([400.0, 500.0, 600.0]) {
            j.dispatch.dpv_mw = dpv;
        }
        let kept: Vec<f64> = filter_min_dpv(&joined, 500.0).iter().map(|j| j.dispatch.dpv_mw).collect();
        assert_eq!(kept, vec![500.0, 600.0]);
        assert_eq!(filter_min_dpv(&joined, 0.0), joined);
    }

    fn arb_interval() -> impl Strategy<Value = DispatchInterval> {
        (
            0i64..10_000,
            prop::array::uniform8(0.0f64..1e5),
            prop::option::of(0.0f64..1e4),
        )
            .prop_map(|(minute, q, w)| {
                let base = ts("2023-01-01T00:00");
                DispatchInterval {
                    timestamp: base + chrono::Duration::minutes(minute),
                    load_mw: q[0],
                    dpv_mw: q[1],
                    energy_injection_mw: q[2],
                    reg_raise_mw: q[3],
                    reg_lower_mw: q[4],
                    cont_raise_mw: q[5],
                    cont_lower_mw: q[6],
                    rocof_control_mws: q[7],
                    energy_withdrawal_mw: w,
                }
            })
    }

    proptest! {
        #[test]
        fn dispatch_csv_round_trip(mut rows in prop::collection::vec(arb_interval(), 0..20)) {
            rows.sort_by_key(|r| r.timestamp);
            rows.dedup_by_key(|r| r.timestamp);
            let mut buf = Vec::new();
            write_dispatch_csv(&mut buf, &rows).unwrap();
            let back = read_dispatch(buf.as_slice(), &DispatchSchema::canonical()).unwrap().strict().unwrap();
            prop_assert_eq!(back, rows);
        }

        #[test]
        fn filter_composes(dpvs in prop::collection::vec(0.0f64..2000.0, 0..30), t1 in 0.0f64..2000.0, t2 in 0.0f64..2000.0) {
            let stamps: Vec<String> = (0..dpvs.len()).map(|i| format!("2023-12-09T{:02}:{:02}", i / 2, (i % 2) * 30)).collect();
            let refs: Vec<&str> = stamps.iter().map(|s| s.as_str()).collect();
            let mut joined = join_records(&dispatch_at(&refs), &weather_at(&refs), 0).joined;
            for (j, d) in joined.iter_mut().zip(&dpvs) {
                j.dispatch.dpv_mw = *d;
            }
            let twice = filter_min_dpv(&filter_min_dpv(&joined, t1), t2);
            prop_assert_eq!(twice, filter_min_dpv(&joined, t1.max(t2)));
        }

        #[test]
        fn join_counts_partition(offsets in prop::collection::vec(-900i64..900, 1..30), tol in 0i64..600) {
            let base = ts("2023-12-09T00:00");
            let dispatch: Vec<DispatchInterval> = (0..offsets.len() as i64)
                .map(|i| DispatchInterval::at(base + chrono::Duration::minutes(30 * i)))
                .collect();
            let weather: Vec<WeatherRecord> = weather_at(&["2023-12-09T00:00"])
                .into_iter()
                .cycle()
                .zip(offsets.iter().enumerate())
                .map(|(mut w, (i, off))| {
                    w.timestamp = base + chrono::Duration::minutes(30 * i as i64) + chrono::Duration::seconds(*off);
                    w
                })
                .collect();
            let out = join_records(&dispatch, &weather, tol);
            prop_assert_eq!(out.joined.len() + out.omitted, dispatch.len());
        }
    }
}
