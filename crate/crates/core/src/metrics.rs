//! ESS-to-DPV vulnerability metrics, seasonal profiles, joint distributions
//! and vulnerable-regime scans.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::Timelike;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market_data::{format_timestamp, Direction, DispatchInterval, Season, Timestamp, DEFAULT_DPV_FLOOR_MW};

/// Default ratio ceilings for the vulnerable-regime scan.
pub const DEFAULT_RAISE_RATIO_MAX: f64 = 0.15;
pub const DEFAULT_LOWER_RATIO_MAX: f64 = 0.12;
/// Default RoCoF-control (K_gen) ceiling for the vulnerable-regime scan.
pub const DEFAULT_ROCOF_MAX_MWS: f64 = 8000.0;
pub const DEFAULT_SLOT_MINUTES: u32 = 30;

/// (Contingency Raise + Regulation Raise) / DPV.
pub fn ess_raise_dpv(interval: &DispatchInterval) -> Result<f64> {
    ratio_over_dpv(interval.ess_raise_mw(), interval.dpv_mw)
}

/// (Contingency Lower + Regulation Lower) / DPV.
pub fn ess_lower_dpv(interval: &DispatchInterval) -> Result<f64> {
    ratio_over_dpv(interval.ess_lower_mw(), interval.dpv_mw)
}

fn ratio_over_dpv(ess: f64, dpv: f64) -> Result<f64> {
    if !(dpv > 0.0) {
        return Err(Error::Domain(format!("DPV must be positive, got {dpv}")));
    }
    Ok(ess / dpv)
}

pub fn dpv_load_ratio(interval: &DispatchInterval) -> Result<f64> {
    if !(interval.load_mw > 0.0) {
        return Err(Error::Domain(format!(
            "load must be positive, got {}",
            interval.load_mw
        )));
    }
    Ok(interval.dpv_mw / interval.load_mw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioPoint {
    pub timestamp: Timestamp,
    pub ess_raise_dpv: f64,
    pub ess_lower_dpv: f64,
    pub dpv_load: f64,
    pub rocof_control_mws: f64,
}

impl RatioPoint {
    pub fn from_interval(interval: &DispatchInterval) -> Result<RatioPoint> {
        Ok(RatioPoint {
            timestamp: interval.timestamp,
            ess_raise_dpv: ess_raise_dpv(interval)?,
            ess_lower_dpv: ess_lower_dpv(interval)?,
            dpv_load: dpv_load_ratio(interval)?,
            rocof_control_mws: interval.rocof_control_mws,
        })
    }

    pub fn ratio(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Raise => self.ess_raise_dpv,
            Direction::Lower => self.ess_lower_dpv,
        }
    }

    pub fn get(&self, field: RatioField) -> f64 {
        match field {
            RatioField::EssRaiseDpv => self.ess_raise_dpv,
            RatioField::EssLowerDpv => self.ess_lower_dpv,
            RatioField::DpvLoad => self.dpv_load,
            RatioField::RocofControl => self.rocof_control_mws,
        }
    }
}

/// Ratio points for every interval whose DPV reaches `dpv_floor_mw` and whose
/// load is positive. Returns the points and the number of skipped intervals.
pub fn ratio_points(records: &[DispatchInterval], dpv_floor_mw: f64) -> (Vec<RatioPoint>, usize) {
    let mut skipped = 0;
    let points = records
        .iter()
        .filter_map(|r| {
            let p = (r.dpv_mw >= dpv_floor_mw.max(f64::MIN_POSITIVE))
                .then(|| RatioPoint::from_interval(r).ok())
                .flatten();
            if p.is_none() {
                skipped += 1;
            }
            p
        })
        .collect();
    (points, skipped)
}

pub fn default_ratio_points(records: &[DispatchInterval]) -> (Vec<RatioPoint>, usize) {
    ratio_points(records, DEFAULT_DPV_FLOOR_MW)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RatioField {
    EssRaiseDpv,
    EssLowerDpv,
    DpvLoad,
    RocofControl,
}

impl RatioField {
    pub fn name(self) -> &'static str {
        match self {
            RatioField::EssRaiseDpv => "ess_raise_dpv",
            RatioField::EssLowerDpv => "ess_lower_dpv",
            RatioField::DpvLoad => "dpv_load",
            RatioField::RocofControl => "rocof_control_mws",
        }
    }
}

/// Dispatch-interval quantities that can be profiled over the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Load,
    Dpv,
    EnergyInjection,
    RegRaise,
    RegLower,
    ContRaise,
    ContLower,
    RocofControl,
}

impl Quantity {
    pub const ALL: [Quantity; 8] = [
        Quantity::Load,
        Quantity::Dpv,
        Quantity::EnergyInjection,
        Quantity::RegRaise,
        Quantity::RegLower,
        Quantity::ContRaise,
        Quantity::ContLower,
        Quantity::RocofControl,
    ];

    pub fn get(self, d: &DispatchInterval) -> f64 {
        match self {
            Quantity::Load => d.load_mw,
            Quantity::Dpv => d.dpv_mw,
            Quantity::EnergyInjection => d.energy_injection_mw,
            Quantity::RegRaise => d.reg_raise_mw,
            Quantity::RegLower => d.reg_lower_mw,
            Quantity::ContRaise => d.cont_raise_mw,
            Quantity::ContLower => d.cont_lower_mw,
            Quantity::RocofControl => d.rocof_control_mws,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Load => "load_mw",
            Quantity::Dpv => "dpv_mw",
            Quantity::EnergyInjection => "energy_injection_mw",
            Quantity::RegRaise => "reg_raise_mw",
            Quantity::RegLower => "reg_lower_mw",
            Quantity::ContRaise => "cont_raise_mw",
            Quantity::ContLower => "cont_lower_mw",
            Quantity::RocofControl => "rocof_control_mws",
        }
    }
}

/// Time-of-day means per season; `None` marks slots without data.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalProfile {
    pub slot_minutes: u32,
    pub slots: BTreeMap<Season, Vec<Option<f64>>>,
}

impl SeasonalProfile {
    pub fn slot(&self, season: Season, hour: u32, minute: u32) -> Option<f64> {
        let idx = ((hour * 60 + minute) / self.slot_minutes) as usize;
        self.slots[&season][idx]
    }

    /// CSV with one row per slot (`slot_start`) and one column per season.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["slot_start".to_string()];
        header.extend(Season::ALL.iter().map(|s| s.name().to_string()));
        w.write_record(&header)?;
        let n = (1440 / self.slot_minutes) as usize;
        for i in 0..n {
            let start = i as u32 * self.slot_minutes;
            let mut row = vec![format!("{:02}:{:02}", start / 60, start % 60)];
            for s in Season::ALL {
                row.push(self.slots[&s][i].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<profile output>", e))?;
        Ok(())
    }
}

/// Seasonal time-of-day profile of `quantity`, slotting each record by its
/// local wall-clock time.
pub fn seasonal_profile(records: &[DispatchInterval], quantity: Quantity, slot_minutes: u32) -> Result<SeasonalProfile> {
    if slot_minutes == 0 || 1440 % slot_minutes != 0 {
        return Err(Error::Config(format!(
            "slot width {slot_minutes} min does not divide a day"
        )));
    }
    let n = (1440 / slot_minutes) as usize;
    let mut sums: BTreeMap<Season, Vec<(f64, usize)>> =
        Season::ALL.iter().map(|s| (*s, vec![(0.0, 0); n])).collect();
    for r in records {
        let minute = r.timestamp.hour() * 60 + r.timestamp.minute();
        let slot = &mut sums.get_mut(&Season::of(&r.timestamp)).unwrap()[(minute / slot_minutes) as usize];
        slot.0 += quantity.get(r);
        slot.1 += 1;
    }
    let slots = sums
        .into_iter()
        .map(|(season, v)| {
            let means = v
                .into_iter()
                .map(|(sum, count)| (count > 0).then(|| sum / count as f64))
                .collect();
            (season, means)
        })
        .collect();
    Ok(SeasonalProfile { slot_minutes, slots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[i][j]` counts samples in `[x_i, x_{i+1}) x [y_j, y_{j+1})`.
    pub counts: Vec<Vec<u64>>,
    pub out_of_range: u64,
}

impl Histogram2D {
    pub fn in_range(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Add another histogram with identical edges.
    pub fn merge(&mut self, other: &Histogram2D) -> Result<()> {
        if self.x_edges != other.x_edges || self.y_edges != other.y_edges {
            return Err(Error::Config("histogram edges differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.out_of_range += other.out_of_range;
        Ok(())
    }

    /// Matrix CSV: header `x_lo,x_hi,` followed by `y_lo..y_hi` bin labels,
    /// one row per x bin, plus a trailing `out_of_range` line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x_lo".to_string(), "x_hi".to_string()];
        header.extend(self.y_edges.windows(2).map(|e| format!("{}..{}", e[0], e[1])));
        w.write_record(&header)?;
        for (i, row) in self.counts.iter().enumerate() {
            let mut out = vec![self.x_edges[i].to_string(), self.x_edges[i + 1].to_string()];
            out.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&out)?;
        }
        let mut tail = vec!["out_of_range".to_string(), self.out_of_range.to_string()];
        tail.resize(header.len(), String::new());
        w.write_record(&tail)?;
        w.flush().map_err(|e| Error::io("<histogram output>", e))?;
        Ok(())
    }
}

fn check_edges(edges: &[f64], axis: &str) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Config(format!("{axis} needs at least two edges")));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{axis} edges must be strictly increasing")));
    }
    Ok(())
}

/// Half-open bin index of `v`, or `None` when outside `[edges[0], edges[last])`.
fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    if !(v >= edges[0] && v < edges[edges.len() - 1]) {
        return None;
    }
    // partition_point gives the first edge strictly greater than v.
    Some(edges.partition_point(|e| *e <= v) - 1)
}

pub fn joint_distribution(
    points: &[RatioPoint],
    x: RatioField,
    y: RatioField,
    x_edges: &[f64],
    y_edges: &[f64],
) -> Result<Histogram2D> {
    check_edges(x_edges, "x")?;
    check_edges(y_edges, "y")?;
    let mut h = Histogram2D {
        x_edges: x_edges.to_vec(),
        y_edges: y_edges.to_vec(),
        counts: vec![vec![0; y_edges.len() - 1]; x_edges.len() - 1],
        out_of_range: 0,
    };
    for p in points {
        match (bin_of(x_edges, p.get(x)), bin_of(y_edges, p.get(y))) {
            (Some(i), Some(j)) => h.counts[i][j] += 1,
            _ => h.out_of_range += 1,
        }
    }
    Ok(h)
}

/// Evenly spaced edges from `lo` to `hi` inclusive.
pub fn linear_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VulnerableWindow {
    pub timestamp: Timestamp,
    pub direction: Direction,
    pub ratio: f64,
    pub rocof_control_mws: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanThresholds {
    pub ratio_max: f64,
    pub rocof_max_mws: f64,
}

impl ScanThresholds {
    pub fn defaults(direction: Direction) -> Self {
        ScanThresholds {
            ratio_max: match direction {
                Direction::Raise => DEFAULT_RAISE_RATIO_MAX,
                Direction::Lower => DEFAULT_LOWER_RATIO_MAX,
            },
            rocof_max_mws: DEFAULT_ROCOF_MAX_MWS,
        }
    }
}

/// Points with both a low ESS/DPV ratio and low RoCoF control, in
/// chronological order.
pub fn scan_vulnerable(points: &[RatioPoint], direction: Direction, thresholds: ScanThresholds) -> Vec<VulnerableWindow> {
    let mut out: Vec<VulnerableWindow> = points
        .iter()
        .filter(|p| p.ratio(direction) <= thresholds.ratio_max && p.rocof_control_mws <= thresholds.rocof_max_mws)
        .map(|p| VulnerableWindow {
            timestamp: p.timestamp,
            direction,
            ratio: p.ratio(direction),
            rocof_control_mws: p.rocof_control_mws,
        })
        .collect();
    out.sort_by_key(|w| w.timestamp);
    out
}

pub fn write_ratio_csv<W: Write>(writer: W, points: &[RatioPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "ess_raise_dpv", "ess_lower_dpv", "dpv_load", "rocof_control_mws"])?;
    for p in points {
        w.write_record([
            format_timestamp(&p.timestamp),
            p.ess_raise_dpv.to_string(),
            p.ess_lower_dpv.to_string(),
            p.dpv_load.to_string(),
            p.rocof_control_mws.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<ratio output>", e))?;
    Ok(())
}

pub fn write_windows_csv<W: Write>(writer: W, windows: &[VulnerableWindow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "direction", "ratio", "rocof_control_mws"])?;
    for v in windows {
        w.write_record([
            format_timestamp(&v.timestamp),
            v.direction.name().to_string(),
            v.ratio.to_string(),
            v.rocof_control_mws.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<window output>", e))?;
    Ok(())
}
