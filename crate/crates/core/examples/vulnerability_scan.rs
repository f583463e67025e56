//! Scan the demo year for intervals where reserves are small next to DPV
//! and inertia is low, then tabulate the raise ratio against inertia.
//!
//!     cargo run --release --example vulnerability_scan

use std::collections::BTreeMap;

use chrono::Timelike;
use gridsec::market_data::{Direction, Season};
use gridsec::metrics::{
    joint_distribution, linear_edges, ratio_points, scan_vulnerable, seasonal_profile, Quantity, RatioField,
    ScanThresholds, DEFAULT_SLOT_MINUTES,
};
use gridsec::market_data::DEFAULT_DPV_FLOOR_MW;
use gridsec::synthetic::demo_year;

fn main() -> gridsec::Result<()> {
    let year = demo_year(42);
    let (points, skipped) = ratio_points(&year.dispatch, DEFAULT_DPV_FLOOR_MW);
    println!("{} intervals above the DPV floor ({skipped} below)", points.len());

    for dir in [Direction::Raise, Direction::Lower] {
        let windows = scan_vulnerable(&points, dir, ScanThresholds::defaults(dir));
        let mut by_hour: BTreeMap<u32, usize> = BTreeMap::new();
        for w in &windows {
            *by_hour.entry(w.timestamp.hour()).or_default() += 1;
        }
        println!("\n{}: {} vulnerable intervals", dir.name(), windows.len());
        for (hour, n) in by_hour {
            println!("  {hour:02}:00  {}", "#".repeat(n.div_ceil(10)));
        }
    }

    let h = joint_distribution(
        &points,
        RatioField::EssRaiseDpv,
        RatioField::RocofControl,
        &linear_edges(0.0, 0.5, 5),
        &linear_edges(0.0, 15000.0, 5),
    )?;
    println!("\nESS raise / DPV (rows) against RoCoF control, MWs (columns)");
    for (i, row) in h.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("  [{:.1}, {:.1})  {}", h.x_edges[i], h.x_edges[i + 1], cells.join(""));
    }
    println!("  out of range: {}", h.out_of_range);

    let dpv = seasonal_profile(&year.dispatch, Quantity::Dpv, DEFAULT_SLOT_MINUTES)?;
    println!("\nmean DPV at noon by season");
    for s in Season::ALL {
        println!("  {:<7} {:>7.0} MW", s.name(), dpv.slot(s, 12, 0).unwrap_or(f64::NAN));
    }
    Ok(())
}
