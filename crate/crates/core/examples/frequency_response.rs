//! Simulate the frequency response to a generation deficit with and
//! without contingency reserve, and compare against the closed form.
//!
//!     cargo run --example frequency_response

use gridsec::freqsim::{closed_form_frequency, simulate, time_to_threshold, Crossing, InertiaModel, ResponseBlock, SimConfig};
use gridsec::market_data::{DispatchInterval, Direction};

fn main() -> gridsec::Result<()> {
    let ts = chrono::DateTime::parse_from_rfc3339("2023-12-09T11:00:00+08:00").unwrap();
    let mut interval = DispatchInterval::at(ts);
    interval.load_mw = 2600.0;
    interval.rocof_control_mws = 5000.0;

    let config = SimConfig { inertia_model: InertiaModel::ZERO, emergency_actions_enabled: false, ..SimConfig::default() };
    let k_sys = config.k_sys(interval.rocof_control_mws, interval.load_mw);
    println!("K_sys = {k_sys} MWs, deficit 250 MW");
    println!("{:>8} {:>12} {:>12} {:>12}", "t (s)", "no reserve", "tau 1 s", "tau 8 s");

    let cases: Vec<(f64, f64)> = vec![(0.0, 1.0), (220.0, 1.0), (220.0, 8.0)];
    let mut trajectories = Vec::new();
    for (p, tau) in &cases {
        let block = ResponseBlock::new(*p, *tau, Direction::Raise)?;
        trajectories.push((block, simulate(250.0, &block, &interval, &config)?));
    }
    for t in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
        let idx = (t / config.step_s).round() as usize;
        let row: Vec<String> = trajectories.iter().map(|(_, tr)| format!("{:>12.4}", tr.freq_hz[idx])).collect();
        println!("{t:>8.1} {}", row.join(" "));
    }
    for ((p, tau), (block, traj)) in cases.iter().zip(&trajectories) {
        let gap = traj
            .times_s
            .iter()
            .zip(&traj.freq_hz)
            .map(|(t, f)| (f - closed_form_frequency(*t, 250.0, block, k_sys, config.f_n_hz)).abs())
            .fold(0.0, f64::max);
        let ufls = time_to_threshold(traj, 48.75, Crossing::Below).map_or("never".into(), |t| format!("{t:.3} s"));
        println!("P = {p:>5} MW, tau = {tau} s: first UFLS stage {ufls}, max gap to closed form {gap:.2e} Hz");
    }
    Ok(())
}
