//! Fit the load-inertia model and effective reserve speed factors to the
//! 26 bundled reference scenarios and print per-row residuals.
//!
//!     cargo run --release --example calibrate_inertia

use gridsec::attack::DEFAULT_OVERSHOOT;
use gridsec::freqsim::{calibrate_inertia, SimConfig, DEFAULT_TAU_GRID_S};
use gridsec::reference::reference_scenarios;

fn main() -> gridsec::Result<()> {
    let scenarios = reference_scenarios();
    let rows = scenarios
        .iter()
        .map(|s| s.calibration_row(DEFAULT_OVERSHOOT))
        .collect::<gridsec::Result<Vec<_>>>()?;
    let cal = calibrate_inertia(&rows, &DEFAULT_TAU_GRID_S, &SimConfig::default())?;

    println!("K_load = {:.3} + {:.6} * load  (MWs)", cal.model.c0_mws, cal.model.c1_s);
    println!("tau raise = {:?} s, tau lower = {:?} s", cal.tau_raise_s, cal.tau_lower_s);
    println!("objective = {:.6}", cal.objective);
    println!("{:<8} {:<26} {:>9} {:>9} {:>8}", "kind", "timestamp", "observed", "model", "error");
    for (s, r) in scenarios.iter().zip(&cal.residuals) {
        println!(
            "{:<8} {:<26} {:>9.2} {:>9.3} {:>7.1}%",
            s.kind.name(),
            s.timestamp.to_rfc3339(),
            r.observed_s,
            r.simulated_s.unwrap_or(f64::NAN),
            100.0 * r.rel_error.unwrap_or(f64::NAN)
        );
    }
    for (i, j) in &cal.degenerate {
        println!("rows {i} and {j} share inputs but report different times");
    }
    Ok(())
}
