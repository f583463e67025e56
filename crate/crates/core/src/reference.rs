//! Bundled reference data: 26 published DPV attack scenarios with their
//! observed times to emergency, and a 29-facility ESS registry.

use std::io::Read;
use std::path::Path;

use chrono::FixedOffset;
use serde::{Deserialize, Serialize};

use crate::attack::{calibration_row, AttackKind};
use crate::error::{Error, Result};
use crate::freqsim::CalibrationRow;
use crate::market_data::{parse_timestamp, read_facilities, DispatchInterval, FacilityRecord, Timestamp};

pub const REFERENCE_SCENARIOS_CSV: &str = include_str!("../data/reference_scenarios.csv");
pub const REFERENCE_FACILITIES_CSV: &str = include_str!("../data/facilities.csv");

pub const SCENARIO_COLUMNS: [&str; 8] = [
    "kind",
    "timestamp",
    "load_mw",
    "dpv_mw",
    "rocof_control_mws",
    "ess_capacity_mw",
    "published_magnitude_mw",
    "observed_time_s",
];

/// One published attack scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScenario {
    pub kind: AttackKind,
    pub timestamp: Timestamp,
    pub load_mw: f64,
    pub dpv_mw: f64,
    pub rocof_control_mws: f64,
    /// ESS Raise for a loss, ESS Lower for a hike.
    pub ess_capacity_mw: f64,
    /// Attack size as printed, rounded to 10 MW.
    pub published_magnitude_mw: f64,
    pub observed_time_s: f64,
}

impl ReferenceScenario {
    /// A dispatch interval carrying the published quantities. The published
    /// ESS total is booked as contingency; the unpublished opposite
    /// direction is set equal to DPV so its ratio sits at 1.0.
    pub fn interval(&self) -> DispatchInterval {
        let mut d = DispatchInterval::at(self.timestamp);
        d.load_mw = self.load_mw;
        d.dpv_mw = self.dpv_mw;
        d.energy_injection_mw = (self.load_mw - self.dpv_mw).max(0.0);
        d.rocof_control_mws = self.rocof_control_mws;
        match self.kind {
            AttackKind::DpvLoss => {
                d.cont_raise_mw = self.ess_capacity_mw;
                d.cont_lower_mw = self.dpv_mw;
            }
            AttackKind::DpvHike => {
                d.cont_raise_mw = self.dpv_mw;
                d.cont_lower_mw = self.ess_capacity_mw;
            }
        }
        d
    }

    pub fn calibration_row(&self, overshoot: f64) -> Result<CalibrationRow> {
        calibration_row(&self.interval(), self.kind, overshoot, self.observed_time_s)
    }
}

pub fn read_reference_scenarios<R: Read>(reader: R) -> Result<Vec<ReferenceScenario>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 8];
    for (slot, name) in cols.iter_mut().zip(SCENARIO_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let utc = FixedOffset::east_opt(0).expect("zero offset");
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i as u64 + 2;
        let cell = |k: usize| record.get(cols[k]).unwrap_or("");
        let bad = |k: usize, reason: &str| Error::Parse {
            row,
            column: SCENARIO_COLUMNS[k].into(),
            value: cell(k).into(),
            reason: reason.into(),
        };
        let num = |k: usize| -> Result<f64> {
            let v: f64 = cell(k).parse().map_err(|_| bad(k, "not a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(k, "must be finite and non-negative"));
            }
            Ok(v)
        };
        out.push(ReferenceScenario {
            kind: cell(0).parse().map_err(|_| bad(0, "expected dpv_loss or dpv_hike"))?,
            timestamp: parse_timestamp(cell(1), utc).ok_or_else(|| bad(1, "not a timestamp"))?,
            load_mw: num(2)?,
            dpv_mw: num(3)?,
            rocof_control_mws: num(4)?,
            ess_capacity_mw: num(5)?,
            published_magnitude_mw: num(6)?,
            observed_time_s: num(7)?,
        });
    }
    Ok(out)
}

pub fn parse_reference_scenarios(path: impl AsRef<Path>) -> Result<Vec<ReferenceScenario>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reference_scenarios(file)
}

/// The 26 bundled scenarios: 13 DPV loss rows then 13 DPV hike rows, in
/// published order.
pub fn reference_scenarios() -> Vec<ReferenceScenario> {
    read_reference_scenarios(REFERENCE_SCENARIOS_CSV.as_bytes()).expect("bundled scenario table parses")
}

pub fn reference_facilities() -> Vec<FacilityRecord> {
    read_facilities(REFERENCE_FACILITIES_CSV.as_bytes()).expect("bundled facility registry parses")
}
