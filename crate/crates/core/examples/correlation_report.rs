//! Pearson correlation of weather and market features against the two
//! ESS-to-DPV ratios over the daytime intervals of the demo year.
//!
//!     cargo run --release --example correlation_report

use gridsec::forecast::correlation_report;
use gridsec::market_data::{filter_min_dpv, DEFAULT_DPV_FLOOR_MW};
use gridsec::synthetic::demo_year;

fn main() -> gridsec::Result<()> {
    let records = filter_min_dpv(&demo_year(42).joined(), DEFAULT_DPV_FLOOR_MW);
    let rows = correlation_report(&records)?;
    println!("{} intervals with DPV >= {DEFAULT_DPV_FLOOR_MW} MW", records.len());
    println!("{:<22} {:<15} {:>8} {:>12}", "feature", "target", "r", "p");
    for r in &rows {
        match (r.r, r.p_value) {
            (Some(c), Some(p)) => println!("{:<22} {:<15} {:>8.3} {:>12.3e}", r.feature, r.target, c, p),
            _ => println!("{:<22} {:<15} {:>8} {:>12}", r.feature, r.target, "n/a", "n/a"),
        }
    }
    Ok(())
}
