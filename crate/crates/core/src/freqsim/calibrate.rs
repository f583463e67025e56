use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{DispatchInterval, Direction};

use super::{
    closed_form_crossing_time, simulate, time_to_threshold, Crossing, InertiaModel, ResponseBlock, SimConfig,
};

/// Speed factors outside this range are not physical for a contingency facility.
const TAU_RANGE_S: (f64, f64) = (0.2, 15.0);
/// Penalty added for parameter vectors that leave the feasible region.
const INFEASIBLE: f64 = 1e12;

/// One observed time-to-emergency used for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub interval: DispatchInterval,
    /// Initial imbalance, positive for a generation deficit.
    pub imbalance_mw: f64,
    /// Opposing contingency capacity.
    pub capacity_mw: f64,
    /// Direction of the opposing reserve: raise for DPV loss, lower for DPV hike.
    pub direction: Direction,
    pub observed_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResidual {
    pub index: usize,
    pub observed_s: f64,
    pub simulated_s: Option<f64>,
    /// `(simulated - observed) / observed`; `None` when the threshold is never reached.
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: InertiaModel,
    /// Effective speed factor of the raise reserve, if any raise rows were given.
    pub tau_raise_s: Option<f64>,
    pub tau_lower_s: Option<f64>,
    pub residuals: Vec<CalibrationResidual>,
    /// Row pairs with identical inputs but different observed times.
    pub degenerate: Vec<(usize, usize)>,
    /// The load column carried no variance, so only `c0` was fitted.
    pub underdetermined: bool,
    /// Sum of squared relative errors at the optimum (closed-form times).
    pub objective: f64,
}

impl Calibration {
    pub fn effective_tau_s(&self, direction: Direction) -> Option<f64> {
        match direction {
            Direction::Raise => self.tau_raise_s,
            Direction::Lower => self.tau_lower_s,
        }
    }

    pub fn max_abs_rel_error(&self) -> Option<f64> {
        self.residuals
            .iter()
            .map(|r| r.rel_error.map(f64::abs))
            .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
    }

    /// `base` with the fitted inertia model and speed factors substituted.
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            inertia_model: self.model,
            tau_raise_s: self.tau_raise_s.unwrap_or(base.tau_raise_s),
            tau_lower_s: self.tau_lower_s.unwrap_or(base.tau_lower_s),
            ..base.clone()
        }
    }
}

fn threshold(config: &SimConfig, direction: Direction) -> Result<(f64, Crossing)> {
    match direction {
        Direction::Raise => config
            .scheme
            .ufls_trigger_hz()
            .map(|t| (t, Crossing::Below))
            .ok_or_else(|| Error::Config("no UFLS stages configured".into())),
        Direction::Lower => Ok((config.scheme.ofgs_threshold_hz, Crossing::Above)),
    }
}

struct Problem<'a> {
    rows: &'a [CalibrationRow],
    thresholds: Vec<f64>,
    f_n: f64,
    horizon: f64,
}

impl Problem<'_> {
    fn tau(&self, row: &CalibrationRow, taus: (f64, f64)) -> f64 {
        match row.direction {
            Direction::Raise => taus.0,
            Direction::Lower => taus.1,
        }
    }

    /// Inertia that makes the analytic trajectory reach the row's threshold
    /// exactly at the observed time.
    fn required_k(&self, i: usize, tau: f64) -> f64 {
        let row = &self.rows[i];
        let (d, p, t) = (row.imbalance_mw.abs(), row.capacity_mw, row.observed_time_s);
        let dev = (self.thresholds[i] - self.f_n).abs();
        self.f_n / (2.0 * dev) * ((d - p) * t - p * tau * (-t / tau).exp_m1())
    }

    fn crossing(&self, i: usize, model: &InertiaModel, tau: f64) -> Option<Option<f64>> {
        let row = &self.rows[i];
        let k = row.interval.rocof_control_mws + model.k_load(row.interval.load_mw);
        if !(k > 0.0) {
            return None;
        }
        let block = ResponseBlock { p_max_mw: row.capacity_mw, tau_s: tau, direction: row.direction };
        Some(closed_form_crossing_time(row.imbalance_mw, &block, k, self.f_n, self.thresholds[i], self.horizon))
    }

    fn cost(&self, model: &InertiaModel, taus: (f64, f64)) -> f64 {
        let in_range = |t: f64| (TAU_RANGE_S.0..=TAU_RANGE_S.1).contains(&t);
        if !in_range(taus.0) || !in_range(taus.1) {
            return INFEASIBLE;
        }
        let mut total = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let Some(t) = self.crossing(i, model, self.tau(row, taus)) else {
                return INFEASIBLE;
            };
            // A missed threshold counts as crossing at twice the horizon.
            let t = t.unwrap_or(2.0 * self.horizon);
            let e = (t - row.observed_time_s) / row.observed_time_s;
            total += e * e;
        }
        total
    }

    /// Weighted least squares of the required load inertia on load, weights
    /// `1/K*^2` so that each row's error counts relatively.
    fn fit_model(&self, taus: (f64, f64), fixed_slope: bool) -> Option<InertiaModel> {
        let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let k = self.required_k(i, self.tau(row, taus));
            if !(k > 0.0) || !k.is_finite() {
                continue;
            }
            let (x, y, w) = (row.interval.load_mw, k - row.interval.rocof_control_mws, 1.0 / (k * k));
            sw += w;
            swx += w * x;
            swy += w * y;
            swxx += w * x * x;
            swxy += w * x * y;
        }
        if sw == 0.0 {
            return None;
        }
        let det = sw * swxx - swx * swx;
        if fixed_slope || det <= 1e-12 * sw * swxx {
            return Some(InertiaModel { c0_mws: swy / sw, c1_s: 0.0 });
        }
        let c1 = (sw * swxy - swx * swy) / det;
        Some(InertiaModel { c0_mws: (swy - c1 * swx) / sw, c1_s: c1 })
    }
}

/// Minimise `f` from `start` with the Nelder-Mead simplex method.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], steps: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for j in 0..n {
        let mut p = start.to_vec();
        p[j] += steps[j];
        let v = f(&p);
        simplex.push((p, v));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let reflected = lerp(&centroid, &simplex[n].0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &simplex[n].0, -2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (toward, ft) = if fr < worst { (&reflected, fr) } else { (&simplex[n].0, worst) };
            let contracted = lerp(&centroid, toward, 0.5);
            let fc = f(&contracted);
            if fc < ft {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    *p = lerp(&anchor, p, 0.5);
                    *v = f(p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Fit the load-inertia model and effective reserve speed factors to
/// observed times-to-emergency.
///
/// Every `(τ_raise, τ_lower)` pair from `tau_grid` is scored after fitting
/// `(c0, c1)` by weighted least squares on the inertia each row requires;
/// the best pair seeds a simplex polish of all parameters jointly. The
/// objective is the sum of squared relative errors of the analytic crossing
/// times, which are exact before any emergency action. Residuals are then
/// recomputed from full simulations under `config`.
pub fn calibrate_inertia(rows: &[CalibrationRow], tau_grid: &[f64], config: &SimConfig) -> Result<Calibration> {
    config.validate()?;
    if rows.len() < 3 {
        return Err(Error::Domain(format!("calibration needs at least 3 rows, got {}", rows.len())));
    }
    if tau_grid.is_empty() || tau_grid.iter().any(|t| !(TAU_RANGE_S.0..=TAU_RANGE_S.1).contains(t)) {
        return Err(Error::Domain(format!(
            "tau grid must be non-empty within [{}, {}] s",
            TAU_RANGE_S.0, TAU_RANGE_S.1
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if !(r.observed_time_s > 0.0) || !(r.capacity_mw >= 0.0) || !r.imbalance_mw.is_finite() {
            return Err(Error::Invariant { row: i as u64 + 1, reason: "observed time must be positive and capacity non-negative".into() });
        }
    }
    let thresholds = rows
        .iter()
        .map(|r| threshold(config, r.direction).map(|t| t.0))
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem { rows, thresholds, f_n: config.f_n_hz, horizon: config.horizon_s };

    let has = |d: Direction| rows.iter().any(|r| r.direction == d);
    let (has_raise, has_lower) = (has(Direction::Raise), has(Direction::Lower));
    let first = tau_grid[0];
    let raise_grid: &[f64] = if has_raise { tau_grid } else { std::slice::from_ref(&first) };
    let lower_grid: &[f64] = if has_lower { tau_grid } else { std::slice::from_ref(&first) };

    let load0 = rows[0].interval.load_mw;
    let underdetermined = rows.iter().all(|r| r.interval.load_mw == load0);

    let mut best: Option<(f64, InertiaModel, (f64, f64))> = None;
    for &tr in raise_grid {
        for &tl in lower_grid {
            let Some(model) = problem.fit_model((tr, tl), underdetermined) else { continue };
            let c = problem.cost(&model, (tr, tl));
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, model, (tr, tl)));
            }
        }
    }
    let (mut objective, mut model, mut taus) =
        best.ok_or_else(|| Error::Infeasible("no grid point yields a positive inertia".into()))?;

    // Simplex polish over the free parameters.
    let mut start = vec![model.c0_mws];
    let mut steps = vec![(0.1 * model.c0_mws.abs()).max(500.0)];
    if !underdetermined {
        start.push(model.c1_s);
        steps.push((0.1 * model.c1_s.abs()).max(0.5));
    }
    let tau_slots: Vec<bool> = vec![has_raise, has_lower];
    for (on, t) in tau_slots.iter().zip([taus.0, taus.1]) {
        if *on {
            start.push(t);
            steps.push(if t > 7.0 { -0.5 } else { 0.5 });
        }
    }
    let unpack = |p: &[f64]| {
        let mut it = p.iter().copied();
        let c0 = it.next().unwrap();
        let c1 = if underdetermined { 0.0 } else { it.next().unwrap() };
        let tr = if has_raise { it.next().unwrap() } else { taus.0 };
        let tl = if has_lower { it.next().unwrap() } else { taus.1 };
        (InertiaModel { c0_mws: c0, c1_s: c1 }, (tr, tl))
    };
    let (p, v) = nelder_mead(
        |p| {
            let (m, t) = unpack(p);
            problem.cost(&m, t)
        },
        &start,
        &steps,
        4000,
    );
    if v < objective {
        (model, taus) = unpack(&p);
        objective = v;
    }

    let fitted = SimConfig {
        inertia_model: model,
        tau_raise_s: taus.0,
        tau_lower_s: taus.1,
        ..config.clone()
    };
    let mut residuals = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let block = ResponseBlock::new(row.capacity_mw, fitted.tau_for(row.direction), row.direction)?;
        let (thr, crossing) = threshold(&fitted, row.direction)?;
        let traj = simulate(row.imbalance_mw, &block, &row.interval, &fitted)?;
        let simulated_s = time_to_threshold(&traj, thr, crossing);
        residuals.push(CalibrationResidual {
            index: i,
            observed_s: row.observed_time_s,
            simulated_s,
            rel_error: simulated_s.map(|s| (s - row.observed_time_s) / row.observed_time_s),
        });
    }

    Ok(Calibration {
        model,
        tau_raise_s: has_raise.then_some(taus.0),
        tau_lower_s: has_lower.then_some(taus.1),
        residuals,
        degenerate: degenerate_pairs(rows),
        underdetermined,
        objective,
    })
}

fn degenerate_pairs(rows: &[CalibrationRow]) -> Vec<(usize, usize)> {
    let key = |r: &CalibrationRow| {
        [r.interval.load_mw, r.interval.rocof_control_mws, r.imbalance_mw, r.capacity_mw].map(f64::to_bits)
    };
    let mut pairs = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if rows[i].direction == rows[j].direction
                && key(&rows[i]) == key(&rows[j])
                && rows[i].observed_time_s != rows[j].observed_time_s
            {
                pairs.push((i, j));
            }
        }
    }
    pairs
}
