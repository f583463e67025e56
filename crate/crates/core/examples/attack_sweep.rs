//! Rank every demo-year interval by how quickly a DPV loss attack sized
//! just above the raise reserve reaches load shedding.
//!
//!     cargo run --release --example attack_sweep

use gridsec::attack::{sweep, AttackKind, DEFAULT_OVERSHOOT};
use gridsec::freqsim::SimConfig;
use gridsec::synthetic::demo_year;

fn main() -> gridsec::Result<()> {
    let year = demo_year(42);
    let config = SimConfig::default();
    for kind in [AttackKind::DpvLoss, AttackKind::DpvHike] {
        let report = sweep(&year.dispatch, kind, DEFAULT_OVERSHOOT, &config, Some(8))?;
        let reached = report.ranked.iter().filter(|e| e.outcome.time_to_emergency_s.is_some()).count();
        println!(
            "\n{}: {} intervals simulated, {} infeasible, top {} shown ({reached} reach {})",
            kind.name(),
            report.evaluated,
            report.skipped.len(),
            report.ranked.len(),
            kind.emergency().name()
        );
        println!("{:<26} {:>7} {:>7} {:>8} {:>7} {:>7} {:>8}", "timestamp", "load", "dpv", "K_gen", "ESS", "share", "time");
        for e in &report.ranked {
            let s = &e.outcome.scenario;
            println!(
                "{:<26} {:>7.0} {:>7.0} {:>8.0} {:>7.0} {:>6.1}% {:>8}",
                s.timestamp.to_rfc3339(),
                e.interval.load_mw,
                e.interval.dpv_mw,
                e.interval.rocof_control_mws,
                s.ess_capacity_mw,
                100.0 * s.compromised_fraction,
                e.outcome.time_to_emergency_s.map_or("-".into(), |t| format!("{t:.2} s"))
            );
        }
    }
    Ok(())
}
