//! DPV loss / hike attack scenarios, single runs, and ranked sweeps.
//!
//! An attacker switches off (loss) or mass switches on (hike) enough
//! rooftop PV to exceed the opposing reserve by a fixed overshoot. The
//! reserve ramps up to its capacity while the residual imbalance keeps
//! pushing frequency toward UFLS (loss) or OFGS (hike).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqsim::{simulate, time_to_threshold, CalibrationRow, Crossing, FrequencyTrajectory, ResponseBlock, SimConfig};
use crate::market_data::{format_timestamp, DispatchInterval, Direction, Timestamp};

pub const DEFAULT_OVERSHOOT: f64 = 1.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    DpvLoss,
    DpvHike,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::DpvLoss => "dpv_loss",
            AttackKind::DpvHike => "dpv_hike",
        }
    }

    /// The reserve that fights this attack.
    pub fn opposing(self) -> Direction {
        match self {
            AttackKind::DpvLoss => Direction::Raise,
            AttackKind::DpvHike => Direction::Lower,
        }
    }

    pub fn emergency(self) -> EmergencyKind {
        match self {
            AttackKind::DpvLoss => EmergencyKind::Ufls,
            AttackKind::DpvHike => EmergencyKind::Ofgs,
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "loss" | "dpv_loss" | "dpv-loss" => Ok(AttackKind::DpvLoss),
            "hike" | "dpv_hike" | "dpv-hike" => Ok(AttackKind::DpvHike),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmergencyKind {
    Ufls,
    Ofgs,
    None,
}

impl EmergencyKind {
    pub fn name(self) -> &'static str {
        match self {
            EmergencyKind::Ufls => "ufls",
            EmergencyKind::Ofgs => "ofgs",
            EmergencyKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub timestamp: Timestamp,
    /// DPV switched off (loss) or on (hike).
    pub magnitude_mw: f64,
    pub ess_capacity_mw: f64,
    /// Imbalance left once the reserve is fully deployed.
    pub residual_mw: f64,
    /// Share of the interval's DPV the attacker must control.
    pub compromised_fraction: f64,
}

impl AttackScenario {
    /// Initial imbalance in the simulator's convention (positive = deficit).
    pub fn imbalance_mw(&self) -> f64 {
        match self.kind {
            AttackKind::DpvLoss => self.magnitude_mw,
            AttackKind::DpvHike => -self.magnitude_mw,
        }
    }

    pub fn response_block(&self, config: &SimConfig) -> Result<ResponseBlock> {
        let direction = self.kind.opposing();
        ResponseBlock::new(self.ess_capacity_mw, config.tau_for(direction), direction)
    }

    /// Stable identifier used to name this scenario's trajectory files.
    pub fn trajectory_ref(&self) -> String {
        format!("{}_{}", self.kind.name(), self.timestamp.format("%Y%m%dT%H%M%S"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub scenario: AttackScenario,
    pub time_to_emergency_s: Option<f64>,
    pub emergency_kind: EmergencyKind,
    pub trajectory_ref: String,
}

fn opposing_capacity(interval: &DispatchInterval, kind: AttackKind) -> f64 {
    match kind.opposing() {
        Direction::Raise => interval.ess_raise_mw(),
        Direction::Lower => interval.ess_lower_mw(),
    }
}

/// Size an attack at `overshoot` times the opposing ESS total.
pub fn build_scenario(interval: &DispatchInterval, kind: AttackKind, overshoot: f64) -> Result<AttackScenario> {
    if !(overshoot > 1.0) || !overshoot.is_finite() {
        return Err(Error::Domain(format!("overshoot must exceed 1, got {overshoot}")));
    }
    let ess = opposing_capacity(interval, kind);
    if !(ess > 0.0) {
        return Err(Error::Domain(format!(
            "no ESS {} dispatched at {}",
            kind.opposing().name(),
            format_timestamp(&interval.timestamp)
        )));
    }
    let magnitude = overshoot * ess;
    if magnitude > interval.dpv_mw {
        return Err(Error::Infeasible(format!(
            "{kind} of {magnitude:.1} MW exceeds {:.1} MW of DPV at {}",
            interval.dpv_mw,
            format_timestamp(&interval.timestamp)
        )));
    }
    Ok(AttackScenario {
        kind,
        timestamp: interval.timestamp,
        magnitude_mw: magnitude,
        ess_capacity_mw: ess,
        residual_mw: (overshoot - 1.0) * ess,
        compromised_fraction: magnitude / interval.dpv_mw,
    })
}

/// Simulate `scenario` and keep the trajectory.
pub fn simulate_scenario(
    scenario: &AttackScenario,
    interval: &DispatchInterval,
    config: &SimConfig,
) -> Result<(AttackOutcome, FrequencyTrajectory)> {
    let block = scenario.response_block(config)?;
    let traj = simulate(scenario.imbalance_mw(), &block, interval, config)?;
    let time = match scenario.kind {
        AttackKind::DpvLoss => config
            .scheme
            .ufls_trigger_hz()
            .and_then(|thr| time_to_threshold(&traj, thr, Crossing::Below)),
        AttackKind::DpvHike => time_to_threshold(&traj, config.scheme.ofgs_threshold_hz, Crossing::Above),
    };
    let outcome = AttackOutcome {
        scenario: scenario.clone(),
        time_to_emergency_s: time,
        emergency_kind: if time.is_some() { scenario.kind.emergency() } else { EmergencyKind::None },
        trajectory_ref: scenario.trajectory_ref(),
    };
    Ok((outcome, traj))
}

pub fn run_scenario(scenario: &AttackScenario, interval: &DispatchInterval, config: &SimConfig) -> Result<AttackOutcome> {
    simulate_scenario(scenario, interval, config).map(|(o, _)| o)
}

/// Calibration input for an interval whose time-to-emergency was observed.
pub fn calibration_row(
    interval: &DispatchInterval,
    kind: AttackKind,
    overshoot: f64,
    observed_time_s: f64,
) -> Result<CalibrationRow> {
    let scenario = build_scenario(interval, kind, overshoot)?;
    Ok(CalibrationRow {
        interval: interval.clone(),
        imbalance_mw: scenario.imbalance_mw(),
        capacity_mw: scenario.ess_capacity_mw,
        direction: kind.opposing(),
        observed_time_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub interval: DispatchInterval,
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInterval {
    pub timestamp: Timestamp,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    /// Fastest-to-emergency first, truncated to `top_k`.
    pub ranked: Vec<SweepEntry>,
    pub evaluated: usize,
    pub skipped: Vec<SkippedInterval>,
}

/// Ascending time-to-emergency (never-reached last), then smaller
/// compromised fraction, then earlier timestamp.
pub fn rank_order(a: &AttackOutcome, b: &AttackOutcome) -> std::cmp::Ordering {
    let time = |o: &AttackOutcome| o.time_to_emergency_s.unwrap_or(f64::INFINITY);
    time(a)
        .total_cmp(&time(b))
        .then(a.scenario.compromised_fraction.total_cmp(&b.scenario.compromised_fraction))
        .then(a.scenario.timestamp.cmp(&b.scenario.timestamp))
}

/// Build and run one scenario per interval in parallel and rank the results.
/// Intervals that cannot host the attack are skipped with a reason.
pub fn sweep(
    records: &[DispatchInterval],
    kind: AttackKind,
    overshoot: f64,
    config: &SimConfig,
    top_k: Option<usize>,
) -> Result<SweepReport> {
    config.validate()?;
    if !(overshoot > 1.0) {
        return Err(Error::Domain(format!("overshoot must exceed 1, got {overshoot}")));
    }
    let results: Vec<std::result::Result<SweepEntry, SkippedInterval>> = records
        .par_iter()
        .map(|interval| {
            build_scenario(interval, kind, overshoot)
                .and_then(|s| run_scenario(&s, interval, config))
                .map(|outcome| SweepEntry { interval: interval.clone(), outcome })
                .map_err(|e| SkippedInterval { timestamp: interval.timestamp, reason: e.to_string() })
        })
        .collect();
    let mut report = SweepReport::default();
    for r in results {
        match r {
            Ok(entry) => report.ranked.push(entry),
            Err(skip) => report.skipped.push(skip),
        }
    }
    report.evaluated = report.ranked.len();
    report.ranked.sort_by(|a, b| rank_order(&a.outcome, &b.outcome));
    if let Some(k) = top_k {
        report.ranked.truncate(k);
    }
    Ok(report)
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "timestamp",
    "load_mw",
    "dpv_mw",
    "rocof_control_mws",
    "ess_capacity_mw",
    "attack_magnitude_mw",
    "compromised_fraction",
    "time_to_emergency_s",
];

/// Ranked sweep in the column order of the published scenario tables. A
/// never-reached emergency leaves the time cell empty.
pub fn write_sweep_csv<W: Write>(writer: W, entries: &[SweepEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_COLUMNS)?;
    for e in entries {
        let s = &e.outcome.scenario;
        w.write_record([
            format_timestamp(&e.interval.timestamp),
            e.interval.load_mw.to_string(),
            e.interval.dpv_mw.to_string(),
            e.interval.rocof_control_mws.to_string(),
            s.ess_capacity_mw.to_string(),
            s.magnitude_mw.to_string(),
            s.compromised_fraction.to_string(),
            e.outcome.time_to_emergency_s.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep output>", e))?;
    Ok(())
}
