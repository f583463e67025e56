//! Drive the frequency through every load-shedding stage and print the
//! event log and the trajectory around each shed.
//!
//!     cargo run --example ufls_staging

use gridsec::freqsim::{simulate, InertiaModel, ResponseBlock, SimConfig};
use gridsec::market_data::{DispatchInterval, Direction};

fn main() -> gridsec::Result<()> {
    let ts = chrono::DateTime::parse_from_rfc3339("2023-10-17T11:00:00+08:00").unwrap();
    let mut interval = DispatchInterval::at(ts);
    interval.load_mw = 2000.0;
    interval.rocof_control_mws = 3000.0;
    let config = SimConfig { inertia_model: InertiaModel::ZERO, horizon_s: 20.0, ..SimConfig::default() };
    let none = ResponseBlock::new(0.0, 1.0, Direction::Raise)?;

    let traj = simulate(1500.0, &none, &interval, &config)?;
    println!("1500 MW deficit on 2000 MW of load, K_sys = 3000 MWs");
    for e in &traj.events {
        println!("{:>8.3} s  {:?}  {}", e.time_s, e.kind, e.detail);
    }
    let last = traj.freq_hz.last().unwrap();
    println!("simulation stopped at {:.2} s, {:.3} Hz", traj.times_s.last().unwrap(), last);

    let mut out = Vec::new();
    traj.write_csv(&mut out)?;
    println!("trajectory CSV: {} bytes, {} samples", out.len(), traj.times_s.len());
    Ok(())
}
