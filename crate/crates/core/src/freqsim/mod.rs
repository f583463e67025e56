//! Single-mass grid frequency model.
//!
//! The whole grid is one rotating mass with inertia `K_sys = K_gen + K_load`
//! and a uniform frequency. A generation/load imbalance `ΔP(t)` drives
//!
//! ```text
//! df/dt = (f_n / 2) * ΔP(t) / K_sys
//! ```
//!
//! Contingency reserve ramps as `P(t) = P_max (1 - exp(-t / τ))`. Under-
//! frequency load shedding (UFLS) and over-frequency generation shedding
//! (OFGS) are the emergency schemes that fire when the reserve is overrun.

mod calibrate;
mod simulate;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::Direction;

pub use calibrate::{calibrate_inertia, Calibration, CalibrationResidual, CalibrationRow};
pub use simulate::simulate;

pub const NOMINAL_FREQUENCY_HZ: f64 = 50.0;
/// Largest integrator step that still resolves the UFLS relay delay.
pub const MAX_STEP_S: f64 = 0.05;
/// Speed factors tried by the calibration grid search.
pub const DEFAULT_TAU_GRID_S: [f64; 11] = [0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0, 15.0];

/// Affine load-inertia model `K_load = c0 + c1 * load`, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaModel {
    pub c0_mws: f64,
    /// MWs of inertia per MW of load.
    pub c1_s: f64,
}

impl InertiaModel {
    pub const ZERO: InertiaModel = InertiaModel { c0_mws: 0.0, c1_s: 0.0 };

    pub fn k_load(&self, load_mw: f64) -> f64 {
        (self.c0_mws + self.c1_s * load_mw).max(0.0)
    }
}

pub fn load_inertia(load_mw: f64, model: &InertiaModel) -> f64 {
    model.k_load(load_mw)
}

/// Aggregate contingency reserve with a first-order ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseBlock {
    pub p_max_mw: f64,
    pub tau_s: f64,
    pub direction: Direction,
}

impl ResponseBlock {
    pub fn new(p_max_mw: f64, tau_s: f64, direction: Direction) -> Result<Self> {
        if !(p_max_mw >= 0.0) || !p_max_mw.is_finite() {
            return Err(Error::Domain(format!("p_max must be non-negative, got {p_max_mw}")));
        }
        if !(tau_s > 0.0) || !tau_s.is_finite() {
            return Err(Error::Domain(format!("tau must be positive, got {tau_s}")));
        }
        Ok(ResponseBlock { p_max_mw, tau_s, direction })
    }

    /// Unsigned output at `t_s >= 0`.
    pub fn output(&self, t_s: f64) -> f64 {
        self.p_max_mw * -(-t_s / self.tau_s).exp_m1()
    }

    /// Output signed by its effect on ΔP: raise adds generation, lower removes it.
    pub fn signed_output(&self, t_s: f64) -> f64 {
        self.sign() * self.output(t_s)
    }

    fn sign(&self) -> f64 {
        match self.direction {
            Direction::Raise => 1.0,
            Direction::Lower => -1.0,
        }
    }
}

pub fn response(block: &ResponseBlock, t_s: f64) -> Result<f64> {
    if !(t_s >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t_s}")));
    }
    Ok(block.output(t_s))
}

/// Rate of change of frequency in Hz/s. Negative `delta_p_mw` is a
/// generation deficit.
pub fn rocof(delta_p_mw: f64, k_sys_mws: f64, f_n_hz: f64) -> Result<f64> {
    if !(k_sys_mws > 0.0) {
        return Err(Error::Domain(format!("system inertia must be positive, got {k_sys_mws}")));
    }
    Ok(f_n_hz / 2.0 * delta_p_mw / k_sys_mws)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UflsStage {
    pub threshold_hz: f64,
    pub shed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergencyScheme {
    pub ufls_stages: Vec<UflsStage>,
    pub ufls_reaction_s: f64,
    pub ofgs_threshold_hz: f64,
}

impl Default for EmergencyScheme {
    /// Five 15% stages from 48.75 Hz down to 47.75 Hz, 0.4 s relay delay,
    /// OFGS at 52 Hz.
    fn default() -> Self {
        EmergencyScheme {
            ufls_stages: [48.75, 48.50, 48.25, 48.00, 47.75]
                .into_iter()
                .map(|threshold_hz| UflsStage { threshold_hz, shed_fraction: 0.15 })
                .collect(),
            ufls_reaction_s: 0.4,
            ofgs_threshold_hz: 52.0,
        }
    }
}

impl EmergencyScheme {
    pub fn validate(&self) -> Result<()> {
        if self.ufls_stages.windows(2).any(|w| w[1].threshold_hz >= w[0].threshold_hz) {
            return Err(Error::Config("UFLS thresholds must be strictly decreasing".into()));
        }
        if self
            .ufls_stages
            .iter()
            .any(|s| !(s.shed_fraction > 0.0 && s.shed_fraction <= 1.0))
        {
            return Err(Error::Config("UFLS shed fractions must lie in (0, 1]".into()));
        }
        let total: f64 = self.ufls_stages.iter().map(|s| s.shed_fraction).sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!("cumulative UFLS shed {total} exceeds 1")));
        }
        if !(self.ufls_reaction_s >= 0.0) {
            return Err(Error::Config("UFLS reaction time must be non-negative".into()));
        }
        Ok(())
    }

    /// First UFLS stage threshold, the point an attack is judged to succeed.
    pub fn ufls_trigger_hz(&self) -> Option<f64> {
        self.ufls_stages.first().map(|s| s.threshold_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub f_n_hz: f64,
    pub step_s: f64,
    pub horizon_s: f64,
    pub inertia_model: InertiaModel,
    pub scheme: EmergencyScheme,
    /// When false the simulator only logs threshold crossings: no load is
    /// shed and the run always reaches the horizon.
    pub emergency_actions_enabled: bool,
    /// Effective speed factor of the aggregate raise reserve.
    pub tau_raise_s: f64,
    /// Effective speed factor of the aggregate lower reserve.
    pub tau_lower_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        // Inertia coefficients and effective speed factors fitted to the
        // bundled reference scenarios (see `reference` and the calibrate
        // example).
        SimConfig {
            f_n_hz: NOMINAL_FREQUENCY_HZ,
            step_s: 0.01,
            horizon_s: 60.0,
            inertia_model: DEFAULT_INERTIA_MODEL,
            scheme: EmergencyScheme::default(),
            emergency_actions_enabled: true,
            tau_raise_s: DEFAULT_TAU_RAISE_S,
            tau_lower_s: DEFAULT_TAU_LOWER_S,
        }
    }
}

pub const DEFAULT_INERTIA_MODEL: InertiaModel = InertiaModel { c0_mws: -8715.18, c1_s: 5.34365 };
pub const DEFAULT_TAU_RAISE_S: f64 = 2.9641;
pub const DEFAULT_TAU_LOWER_S: f64 = 15.0;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_n_hz > 0.0) {
            return Err(Error::Config("nominal frequency must be positive".into()));
        }
        if !(self.step_s > 0.0 && self.step_s <= MAX_STEP_S) {
            return Err(Error::Config(format!(
                "step {} s outside (0, {MAX_STEP_S}]",
                self.step_s
            )));
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.tau_raise_s > 0.0 && self.tau_lower_s > 0.0) {
            return Err(Error::Config("effective speed factors must be positive".into()));
        }
        self.scheme.validate()
    }

    pub fn tau_for(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Raise => self.tau_raise_s,
            Direction::Lower => self.tau_lower_s,
        }
    }

    pub fn k_sys(&self, k_gen_mws: f64, load_mw: f64) -> f64 {
        k_gen_mws + self.inertia_model.k_load(load_mw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// UFLS stage (1-based) threshold crossed.
    UflsStage(u8),
    /// Load of the given UFLS stage actually disconnected.
    ShedApplied(u8),
    Ofgs,
    /// Reserve output reached 99% of its capacity.
    ContingencySaturated,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::UflsStage(k) => write!(f, "ufls_stage_{k}"),
            EventKind::ShedApplied(k) => write!(f, "shed_applied_{k}"),
            EventKind::Ofgs => f.write_str("ofgs"),
            EventKind::ContingencySaturated => f.write_str("contingency_saturated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time_s: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyTrajectory {
    pub times_s: Vec<f64>,
    pub freq_hz: Vec<f64>,
    pub events: Vec<SimEvent>,
}

impl FrequencyTrajectory {
    pub fn first_event(&self, kind: EventKind) -> Option<&SimEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "freq_hz"])?;
        for (t, f) in self.times_s.iter().zip(&self.freq_hz) {
            w.write_record([t.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<trajectory output>", e))?;
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "event", "detail"])?;
        for e in &self.events {
            w.write_record([e.time_s.to_string(), e.kind.to_string(), e.detail.clone()])?;
        }
        w.flush().map_err(|e| Error::io("<event output>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Below,
    Above,
}

/// Time of the first threshold crossing, interpolated linearly between the
/// bracketing samples.
pub fn time_to_threshold(traj: &FrequencyTrajectory, threshold_hz: f64, direction: Crossing) -> Option<f64> {
    let hit = |f: f64| match direction {
        Crossing::Below => f <= threshold_hz,
        Crossing::Above => f >= threshold_hz,
    };
    let i = traj.freq_hz.iter().position(|f| hit(*f))?;
    if i == 0 {
        return traj.times_s.first().copied();
    }
    let (t0, t1) = (traj.times_s[i - 1], traj.times_s[i]);
    let (f0, f1) = (traj.freq_hz[i - 1], traj.freq_hz[i]);
    Some(t0 + (threshold_hz - f0) / (f1 - f0) * (t1 - t0))
}

/// Analytic frequency for a constant-inertia, pre-emergency run:
///
/// ```text
/// f(t) = f_n + f_n / (2K) * ( -D t + s P_max (t - τ (1 - e^{-t/τ})) )
/// ```
///
/// with `D` the initial imbalance (positive = deficit) and `s = +1` for a
/// raise block, `-1` for a lower block.
pub fn closed_form_frequency(t_s: f64, initial_imbalance_mw: f64, block: &ResponseBlock, k_sys_mws: f64, f_n_hz: f64) -> f64 {
    let ramp_energy = block.p_max_mw * (t_s + block.tau_s * (-t_s / block.tau_s).exp_m1());
    f_n_hz + f_n_hz / (2.0 * k_sys_mws) * (-initial_imbalance_mw * t_s + block.sign() * ramp_energy)
}

/// First time the analytic trajectory reaches `threshold_hz`, searched on
/// `[0, horizon_s]`. Coarse scan then bisection; exact to ~1e-12 s.
pub fn closed_form_crossing_time(
    initial_imbalance_mw: f64,
    block: &ResponseBlock,
    k_sys_mws: f64,
    f_n_hz: f64,
    threshold_hz: f64,
    horizon_s: f64,
) -> Option<f64> {
    let below = threshold_hz < f_n_hz;
    let gap = |t: f64| {
        let f = closed_form_frequency(t, initial_imbalance_mw, block, k_sys_mws, f_n_hz);
        if below {
            f - threshold_hz
        } else {
            threshold_hz - f
        }
    };
    // With the imbalance larger than the reserve the trajectory is monotone
    // and a single bracket suffices.
    let monotone = if below {
        initial_imbalance_mw >= 0.0 && (block.direction == Direction::Lower || initial_imbalance_mw >= block.p_max_mw)
    } else {
        initial_imbalance_mw <= 0.0 && (block.direction == Direction::Raise || -initial_imbalance_mw >= block.p_max_mw)
    };
    let (mut lo, mut hi) = if monotone {
        if gap(horizon_s) > 0.0 {
            return None;
        }
        (0.0, horizon_s)
    } else {
        let dt = 0.01;
        let n = (horizon_s / dt).ceil() as usize;
        let k = (1..=n).find(|&k| gap((k as f64 * dt).min(horizon_s)) <= 0.0)?;
        ((k - 1) as f64 * dt, (k as f64 * dt).min(horizon_s))
    };
    if gap(lo) <= 0.0 {
        return Some(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Some(hi)
}
