use crate::error::{Error, Result};
use crate::market_data::DispatchInterval;

use super::{EventKind, FrequencyTrajectory, ResponseBlock, SimConfig, SimEvent};

/// Classic fourth-order Runge-Kutta step for `y' = rhs(t, y)`.
fn rk4_step(rhs: impl Fn(f64, f64) -> f64, t: f64, y: f64, h: f64) -> f64 {
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = rhs(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

struct PendingShed {
    at_s: f64,
    stage: usize,
}

struct State<'a> {
    config: &'a SimConfig,
    block: &'a ResponseBlock,
    imbalance_mw: f64,
    load_mw: f64,
    k_gen: f64,
    k_load0: f64,
    shed_mw: f64,
    remaining_load: f64,
    next_stage: usize,
    ofgs_seen: bool,
    pending: Vec<PendingShed>,
    events: Vec<SimEvent>,
    stop: bool,
}

impl State<'_> {
    fn k_sys(&self) -> f64 {
        self.k_gen + self.k_load0 * self.remaining_load
    }

    fn delta_p(&self, t: f64) -> f64 {
        -self.imbalance_mw + self.block.signed_output(t) + self.shed_mw
    }

    fn integrate(&self, t: f64, f: f64, h: f64) -> Result<f64> {
        let k_sys = self.k_sys();
        if !(k_sys > 0.0) {
            return Err(Error::Domain(format!("system inertia must be positive, got {k_sys}")));
        }
        let gain = self.config.f_n_hz / 2.0 / k_sys;
        Ok(rk4_step(|s, _| gain * self.delta_p(s), t, f, h))
    }

    /// Log threshold crossings between two consecutive states.
    fn detect(&mut self, (ta, fa): (f64, f64), (tb, fb): (f64, f64)) {
        let at = |thr: f64| {
            if fb == fa {
                tb
            } else {
                ta + (thr - fa) / (fb - fa) * (tb - ta)
            }
        };
        let scheme = &self.config.scheme;
        while let Some(stage) = scheme.ufls_stages.get(self.next_stage) {
            if fb > stage.threshold_hz {
                break;
            }
            let t_cross = at(stage.threshold_hz);
            self.events.push(SimEvent {
                time_s: t_cross,
                kind: EventKind::UflsStage(self.next_stage as u8 + 1),
                detail: format!("threshold {} Hz", stage.threshold_hz),
            });
            if self.config.emergency_actions_enabled {
                self.pending.push(PendingShed {
                    at_s: t_cross + scheme.ufls_reaction_s,
                    stage: self.next_stage,
                });
            }
            self.next_stage += 1;
        }
        if !self.ofgs_seen && fb >= scheme.ofgs_threshold_hz {
            self.ofgs_seen = true;
            self.events.push(SimEvent {
                time_s: at(scheme.ofgs_threshold_hz),
                kind: EventKind::Ofgs,
                detail: format!("threshold {} Hz", scheme.ofgs_threshold_hz),
            });
            if self.config.emergency_actions_enabled {
                self.stop = true;
            }
        }
    }

    fn apply_shed(&mut self, shed: PendingShed) {
        let fraction = self.config.scheme.ufls_stages[shed.stage].shed_fraction;
        let amount = fraction * self.load_mw;
        self.shed_mw += amount;
        self.remaining_load = (self.remaining_load - fraction).max(0.0);
        self.events.push(SimEvent {
            time_s: shed.at_s,
            kind: EventKind::ShedApplied(shed.stage as u8 + 1),
            detail: format!("{amount:.1} MW"),
        });
        if shed.stage + 1 == self.config.scheme.ufls_stages.len() {
            self.stop = true;
        }
    }

    fn take_shed_before(&mut self, t_end: f64) -> Option<PendingShed> {
        let idx = self
            .pending
            .iter()
            .enumerate()
            .filter(|(_, p)| p.at_s <= t_end + 1e-12)
            .min_by(|a, b| a.1.at_s.total_cmp(&b.1.at_s))
            .map(|(i, _)| i)?;
        Some(self.pending.remove(idx))
    }
}

/// Integrate grid frequency after a step imbalance of `initial_imbalance_mw`
/// (positive = generation deficit, negative = surplus), opposed by
/// `contingency`.
///
/// Inertia is `K_gen` (the interval's RoCoF control) plus the load inertia
/// predicted from the interval's load. Each UFLS stage is logged when its
/// threshold is first crossed; with emergency actions enabled the stage's
/// share of the pre-event load is disconnected `ufls_reaction_s` later,
/// which both reduces the deficit and removes the matching share of load
/// inertia. Samples are uniform in time; relay actions are applied at their
/// exact instant by splitting the integrator step.
pub fn simulate(
    initial_imbalance_mw: f64,
    contingency: &ResponseBlock,
    interval: &DispatchInterval,
    config: &SimConfig,
) -> Result<FrequencyTrajectory> {
    config.validate()?;
    if !initial_imbalance_mw.is_finite() {
        return Err(Error::Domain("imbalance must be finite".into()));
    }
    let mut state = State {
        config,
        block: contingency,
        imbalance_mw: initial_imbalance_mw,
        load_mw: interval.load_mw,
        k_gen: interval.rocof_control_mws,
        k_load0: config.inertia_model.k_load(interval.load_mw),
        shed_mw: 0.0,
        remaining_load: 1.0,
        next_stage: 0,
        ofgs_seen: false,
        pending: Vec::new(),
        events: Vec::new(),
        stop: false,
    };
    if !(state.k_sys() > 0.0) {
        return Err(Error::Domain(format!(
            "system inertia must be positive, got {}",
            state.k_sys()
        )));
    }

    let h = config.step_s;
    let n_steps = (config.horizon_s / h).round() as usize;
    let saturation_s = (contingency.p_max_mw > 0.0).then(|| contingency.tau_s * 100f64.ln());

    let mut traj = FrequencyTrajectory {
        times_s: Vec::with_capacity(n_steps + 1),
        freq_hz: Vec::with_capacity(n_steps + 1),
        events: Vec::new(),
    };
    let mut f = config.f_n_hz;
    traj.times_s.push(0.0);
    traj.freq_hz.push(f);

    for i in 0..n_steps {
        let t0 = i as f64 * h;
        let t1 = (i + 1) as f64 * h;
        let mut t = t0;
        loop {
            let shed = state.take_shed_before(t1);
            let seg_end = shed.as_ref().map_or(t1, |s| s.at_s.clamp(t, t1));
            if seg_end > t {
                let f_next = state.integrate(t, f, seg_end - t)?;
                state.detect((t, f), (seg_end, f_next));
                f = f_next;
                t = seg_end;
            }
            match shed {
                Some(s) => state.apply_shed(s),
                None => break,
            }
        }
        if let Some(ts) = saturation_s {
            if ts > t0 && ts <= t1 {
                state.events.push(SimEvent {
                    time_s: ts,
                    kind: EventKind::ContingencySaturated,
                    detail: format!("{:.1} MW", 0.99 * contingency.p_max_mw),
                });
            }
        }
        traj.times_s.push(t1);
        traj.freq_hz.push(f);
        if state.stop {
            break;
        }
    }
    state.events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    traj.events = state.events;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freqsim::{closed_form_frequency, time_to_threshold, Crossing, InertiaModel};
    use crate::market_data::{parse_timestamp, Direction};
    use chrono::FixedOffset;
    use proptest::prelude::*;

    fn interval(load: f64, k_gen: f64) -> DispatchInterval {
        let ts = parse_timestamp("2023-12-09T11:00+08:00", FixedOffset::east_opt(0).unwrap()).unwrap();
        let mut d = DispatchInterval::at(ts);
        d.load_mw = load;
        d.rocof_control_mws = k_gen;
        d
    }

    fn bare_config() -> SimConfig {
        SimConfig {
            inertia_model: InertiaModel::ZERO,
            emergency_actions_enabled: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn flat_when_balanced() {
        let block = ResponseBlock::new(0.0, 1.0, Direction::Raise).unwrap();
        let traj = simulate(0.0, &block, &interval(2000.0, 5000.0), &SimConfig::default()).unwrap();
        assert!(traj.freq_hz.iter().all(|f| *f == 50.0));
        assert!(traj.events.is_empty());
        assert_eq!(traj.times_s.len(), 6001);
    }

    #[test]
    fn constant_deficit_is_linear() {
        let block = ResponseBlock::new(0.0, 1.0, Direction::Raise).unwrap();
        let traj = simulate(100.0, &block, &interval(2000.0, 5000.0), &bare_config()).unwrap();
        for (t, f) in traj.times_s.iter().zip(&traj.freq_hz).take(500) {
            assert!((f - (50.0 - 0.5 * t)).abs() < 1e-9);
        }
        let t = time_to_threshold(&traj, 48.75, Crossing::Below).unwrap();
        assert!((t - 2.5).abs() < 1e-9);
        let ev = traj.first_event(EventKind::UflsStage(1)).unwrap();
        assert!((ev.time_s - 2.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        let block = ResponseBlock::new(10.0, 1.0, Direction::Raise).unwrap();
        assert!(simulate(100.0, &block, &interval(0.0, 0.0), &bare_config()).is_err());
        let coarse = SimConfig { step_s: 0.2, ..bare_config() };
        assert!(simulate(100.0, &block, &interval(1.0, 1000.0), &coarse).is_err());
    }

    #[test]
    fn staged_shedding() {
        // Steep decline: 1500 MW deficit against 3000 MWs.
        let block = ResponseBlock::new(0.0, 1.0, Direction::Raise).unwrap();
        let config = SimConfig {
            inertia_model: InertiaModel::ZERO,
            ..SimConfig::default()
        };
        let traj = simulate(1500.0, &block, &interval(2000.0, 3000.0), &config).unwrap();
        // 12.5 Hz/s; each shed of 300 MW reduces the slope by 2.5 Hz/s.
        let stages: Vec<&SimEvent> = traj.events.iter().filter(|e| matches!(e.kind, EventKind::UflsStage(_))).collect();
        assert_eq!(stages.len(), 5);
        for (k, e) in stages.iter().enumerate() {
            let sheds: Vec<_> = traj.events.iter().filter(|x| x.kind == EventKind::ShedApplied(k as u8 + 1)).collect();
            assert_eq!(sheds.len(), 1);
            assert!((sheds[0].time_s - e.time_s - 0.4).abs() < 1e-9);
        }
        // Stops once the last stage has acted.
        let last = traj.first_event(EventKind::ShedApplied(5)).unwrap().time_s;
        assert!(*traj.times_s.last().unwrap() < last + 0.01 + 1e-9);
    }

    #[test]
    fn ofgs_is_terminal() {
        let block = ResponseBlock::new(50.0, 2.0, Direction::Lower).unwrap();
        let config = SimConfig {
            inertia_model: InertiaModel::ZERO,
            ..SimConfig::default()
        };
        let traj = simulate(-200.0, &block, &interval(2000.0, 5000.0), &config).unwrap();
        let ofgs = traj.first_event(EventKind::Ofgs).unwrap();
        assert!(*traj.times_s.last().unwrap() - ofgs.time_s <= 0.01 + 1e-9);
        let t = time_to_threshold(&traj, 52.0, Crossing::Above).unwrap();
        assert!((t - ofgs.time_s).abs() < 1e-12);
    }

    #[test]
    fn saturation_logged() {
        let block = ResponseBlock::new(100.0, 1.0, Direction::Raise).unwrap();
        let traj = simulate(50.0, &block, &interval(2000.0, 5000.0), &bare_config()).unwrap();
        let e = traj.first_event(EventKind::ContingencySaturated).unwrap();
        assert!((e.time_s - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn step_halving_converges() {
        let block = ResponseBlock::new(220.0, 3.0, Direction::Raise).unwrap();
        let times: Vec<f64> = [0.04, 0.02, 0.01, 0.005]
            .iter()
            .map(|h| {
                let cfg = SimConfig { step_s: *h, ..SimConfig::default() };
                let traj = simulate(242.0, &block, &interval(2670.0, 6400.0), &cfg).unwrap();
                time_to_threshold(&traj, 48.75, Crossing::Below).unwrap()
            })
            .collect();
        for w in times.windows(3) {
            let (d1, d2) = ((w[1] - w[0]).abs(), (w[2] - w[1]).abs());
            assert!(d2 < 2.0 * d1 || d2 < 1e-12, "{times:?}");
        }
    }

    proptest! {
        #[test]
        fn matches_closed_form(d in 10.0f64..500.0, p in 0.0f64..400.0, tau in 0.2f64..15.0, k in 2000.0f64..10000.0) {
            let block = ResponseBlock::new(p, tau, Direction::Raise).unwrap();
            let traj = simulate(d, &block, &interval(0.0, k), &bare_config()).unwrap();
            for (t, f) in traj.times_s.iter().zip(&traj.freq_hz) {
                prop_assert!((f - closed_form_frequency(*t, d, &block, k, 50.0)).abs() <= 1e-6);
            }
        }

        #[test]
        fn pure_deficit_strictly_decreasing(extra in 1.0f64..300.0, p in 0.0f64..300.0, tau in 0.2f64..15.0, k in 2000.0f64..10000.0) {
            let block = ResponseBlock::new(p, tau, Direction::Raise).unwrap();
            let cfg = SimConfig { horizon_s: 10.0, ..bare_config() };
            let traj = simulate(p + extra, &block, &interval(0.0, k), &cfg).unwrap();
            prop_assert!(traj.freq_hz.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn doubling_inertia_halves_rocof(d in 10.0f64..500.0, p in 0.0f64..400.0, tau in 0.2f64..15.0, k in 2000.0f64..10000.0) {
            let block = ResponseBlock::new(p, tau, Direction::Raise).unwrap();
            let cfg = SimConfig { horizon_s: 20.0, ..bare_config() };
            let a = simulate(d, &block, &interval(0.0, k), &cfg).unwrap();
            let b = simulate(d, &block, &interval(0.0, 2.0 * k), &cfg).unwrap();
            for (fa, fb) in a.freq_hz.iter().zip(&b.freq_hz) {
                prop_assert!(((fa - 50.0) - 2.0 * (fb - 50.0)).abs() <= 1e-9);
            }
            if let (Some(ta), Some(tb)) = (time_to_threshold(&a, 48.75, Crossing::Below), time_to_threshold(&b, 48.75, Crossing::Below)) {
                prop_assert!(tb > ta);
            }
        }

        #[test]
        fn hike_mirrors_loss(d in 10.0f64..500.0, p in 0.0f64..400.0, tau in 0.2f64..15.0, k in 2000.0f64..10000.0) {
            let raise = ResponseBlock::new(p, tau, Direction::Raise).unwrap();
            let lower = ResponseBlock::new(p, tau, Direction::Lower).unwrap();
            let cfg = SimConfig { horizon_s: 20.0, ..bare_config() };
            let loss = simulate(d, &raise, &interval(0.0, k), &cfg).unwrap();
            let hike = simulate(-d, &lower, &interval(0.0, k), &cfg).unwrap();
            for (fl, fh) in loss.freq_hz.iter().zip(&hike.freq_hz) {
                prop_assert!(((fh - 50.0) + (fl - 50.0)).abs() <= 1e-9);
            }
        }

        #[test]
        fn stages_fire_in_order_once(d in 600.0f64..3000.0, k in 2000.0f64..6000.0) {
            let block = ResponseBlock::new(0.0, 1.0, Direction::Raise).unwrap();
            let cfg = SimConfig { inertia_model: InertiaModel::ZERO, ..SimConfig::default() };
            let traj = simulate(d, &block, &interval(4000.0, k), &cfg).unwrap();
            let h = cfg.step_s;
            for (idx, stage) in cfg.scheme.ufls_stages.iter().enumerate() {
                let kind = EventKind::UflsStage(idx as u8 + 1);
                let fired: Vec<_> = traj.events.iter().filter(|e| e.kind == kind).collect();
                prop_assert!(fired.len() <= 1);
                if let Some(e) = fired.first() {
                    // Never before the frequency actually reached the threshold.
                    let i = traj.times_s.iter().position(|t| *t >= e.time_s - 1e-12).unwrap();
                    prop_assert!(traj.freq_hz[i] <= stage.threshold_hz + 1e-9);
                    if let Some(s) = traj.first_event(EventKind::ShedApplied(idx as u8 + 1)) {
                        prop_assert!(s.time_s >= e.time_s + cfg.scheme.ufls_reaction_s - h);
                    }
                }
            }
        }
    }
}
