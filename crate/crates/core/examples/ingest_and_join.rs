//! Write a synthetic dispatch file and weather file with vendor-style
//! quirks, ingest them leniently, and join on timestamp.
//!
//!     cargo run --example ingest_and_join

use std::io::Write;

use gridsec::market_data::{
    filter_min_dpv, join_records, read_dispatch, read_weather, write_dispatch_csv, write_weather_csv, DispatchSchema,
    DEFAULT_DPV_FLOOR_MW, DEFAULT_JOIN_TOLERANCE_S, WeatherSchema,
};
use gridsec::synthetic::demo_year;

fn main() -> gridsec::Result<()> {
    let year = demo_year(1);
    let week = 7 * 48;

    // Dispatch with the load column renamed and one corrupt row appended.
    let mut dispatch = Vec::new();
    write_dispatch_csv(&mut dispatch, &year.dispatch[..week])?;
    let text = String::from_utf8(dispatch).unwrap().replacen("load_mw", "OperationalDemand", 1);
    let mut dispatch = text.into_bytes();
    writeln!(dispatch, "2023-01-08T00:00:00+08:00,1900,0,1900,80,-5,150,90,8000,0").unwrap();

    // Weather shifted by two minutes, as a separate feed often is.
    let mut weather = Vec::new();
    let shifted: Vec<_> = year.weather[..week]
        .iter()
        .map(|w| {
            let mut w = w.clone();
            w.timestamp += chrono::Duration::minutes(2);
            w
        })
        .collect();
    write_weather_csv(&mut weather, &shifted)?;

    let schema = DispatchSchema::canonical().rename("load_mw", "OperationalDemand")?;
    let d = read_dispatch(dispatch.as_slice(), &schema)?;
    let w = read_weather(weather.as_slice(), &WeatherSchema::default())?;
    println!("dispatch: {} accepted, {} rejected", d.records.len(), d.rejected.len());
    for r in &d.rejected {
        println!("  row {}: {}", r.row, r.reason);
    }

    let joined = join_records(&d.records, &w.records, DEFAULT_JOIN_TOLERANCE_S);
    println!("joined {} intervals, {} without weather", joined.joined.len(), joined.omitted);
    let tight = join_records(&d.records, &w.records, 60);
    println!("with a 60 s tolerance: {} joined, {} omitted", tight.joined.len(), tight.omitted);

    let daytime = filter_min_dpv(&joined.joined, DEFAULT_DPV_FLOOR_MW);
    println!("{} intervals carry at least {DEFAULT_DPV_FLOOR_MW} MW of DPV", daytime.len());
    Ok(())
}
