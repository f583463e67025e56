//! Seeded demo data: a year of half-hourly dispatch and weather for a
//! mid-latitude southern-hemisphere grid with heavy rooftop solar.
//!
//! The numbers are plausible rather than realistic. They exist so the
//! examples and the CLI have something to chew on without proprietary data.

use chrono::{Datelike, Duration, FixedOffset, NaiveDate, TimeZone, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::market_data::{join_records, DispatchInterval, JoinedInterval, Timestamp, WeatherRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoParams {
    pub year: i32,
    pub step_minutes: u32,
    pub latitude_deg: f64,
    /// Installed rooftop PV, MW.
    pub dpv_capacity_mw: f64,
    pub utc_offset_h: i32,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams { year: 2023, step_minutes: 30, latitude_deg: -32.0, dpv_capacity_mw: 2400.0, utc_offset_h: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoYear {
    pub dispatch: Vec<DispatchInterval>,
    pub weather: Vec<WeatherRecord>,
}

impl DemoYear {
    pub fn joined(&self) -> Vec<JoinedInterval> {
        join_records(&self.dispatch, &self.weather, 0).joined
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Solar zenith angle in degrees from day of year and local solar hour.
pub fn solar_zenith_deg(latitude_deg: f64, day_of_year: u32, solar_hour: f64) -> f64 {
    let decl = 23.45f64.to_radians() * (2.0 * std::f64::consts::PI * (284.0 + day_of_year as f64) / 365.0).sin();
    let lat = latitude_deg.to_radians();
    let hour_angle = (15.0 * (solar_hour - 12.0)).to_radians();
    let cos_z = lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos();
    cos_z.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn demo_year(seed: u64) -> DemoYear {
    demo_year_with(&DemoParams::default(), seed)
}

pub fn demo_year_with(p: &DemoParams, seed: u64) -> DemoYear {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let offset = FixedOffset::east_opt(p.utc_offset_h * 3600).expect("offset in range");
    let start = NaiveDate::from_ymd_opt(p.year, 1, 1).expect("valid year").and_hms_opt(0, 0, 0).unwrap();
    let end = NaiveDate::from_ymd_opt(p.year + 1, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let step = Duration::minutes(p.step_minutes as i64);
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut opacity: f64 = 0.2;
    let mut out = DemoYear { dispatch: Vec::new(), weather: Vec::new() };
    let mut t = start;
    while t < end {
        let ts: Timestamp = offset.from_local_datetime(&t).single().expect("fixed offset is unambiguous");
        let doy = t.ordinal();
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
        // Winter (mid-year) is cloudier.
        let season = (two_pi * (doy as f64 - 15.0) / 365.0).cos();
        let cloud_mean = 0.3 - 0.15 * season;
        opacity = (cloud_mean + 0.97 * (opacity - cloud_mean) + 0.06 * unit.sample(&mut rng)).clamp(0.0, 1.0);

        let zenith = solar_zenith_deg(p.latitude_deg, doy, hour - 0.25);
        let cos_z = zenith.to_radians().cos().max(0.0);
        let clear = 1050.0 * cos_z.powf(1.15);
        let ghi = clear * (1.0 - 0.75 * opacity);
        let dhi = ghi * (0.12 + 0.6 * opacity);
        let temp = 18.5 + 6.5 * season + 5.0 * (two_pi * (hour - 9.0) / 24.0).sin() + unit.sample(&mut rng);
        let wind: f64 = (3.5 + 1.5 * unit.sample(&mut rng)).abs();

        let derate = 1.0 - 0.004 * (temp + 0.03 * ghi - 25.0);
        let dpv = (p.dpv_capacity_mw * ghi / 1000.0 * derate).max(0.0);
        let evening = (-((hour - 18.5) / 2.2).powi(2)).exp();
        let morning = (-((hour - 8.0) / 1.8).powi(2)).exp();
        let cooling = (temp - 24.0).max(0.0) * 45.0;
        let heating = (14.0 - temp).max(0.0) * 30.0;
        let load = 1650.0 + 750.0 * evening + 250.0 * morning + cooling + heating + 40.0 * unit.sample(&mut rng);
        let injection = (load - dpv).max(250.0);
        let withdrawal = (0.06 * dpv + 10.0 * unit.sample(&mut rng)).max(0.0);

        // Fewer synchronous machines online when little energy is dispatched.
        let k_gen = (3.6 * injection + 1800.0 + 300.0 * unit.sample(&mut rng)).max(2500.0);
        let largest_unit = 0.22 * injection.min(1200.0) + 60.0;
        let cont_raise = (largest_unit + 20.0 * unit.sample(&mut rng)).max(40.0);
        let cont_lower = (60.0 + 0.03 * load + 10.0 * unit.sample(&mut rng)).max(20.0);
        let reg_raise = rng.random_range(60.0..110.0);
        let reg_lower = rng.random_range(50.0..100.0);

        out.weather.push(WeatherRecord {
            timestamp: ts,
            air_temp_c: round1(temp),
            zenith_deg: round1(zenith),
            cloud_opacity: (opacity * 1000.0).round() / 1000.0,
            dhi_wm2: round1(dhi),
            ghi_wm2: round1(ghi),
            wind_speed_ms: round1(wind),
        });
        out.dispatch.push(DispatchInterval {
            timestamp: ts,
            load_mw: round1(load),
            dpv_mw: round1(dpv),
            energy_injection_mw: round1(injection),
            reg_raise_mw: round1(reg_raise),
            reg_lower_mw: round1(reg_lower),
            cont_raise_mw: round1(cont_raise),
            cont_lower_mw: round1(cont_lower),
            rocof_control_mws: round1(k_gen),
            energy_withdrawal_mw: Some(round1(withdrawal)),
        });
        t += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zenith_at_solar_noon() {
        // At an equinox the noon zenith equals |latitude|.
        let z = solar_zenith_deg(-32.0, 81, 12.0);
        assert!((z - 32.0).abs() < 1.0, "{z}");
        // Summer solstice in the south: sun within ~9 degrees of overhead.
        assert!((solar_zenith_deg(-32.0, 355, 12.0) - 8.55).abs() < 0.5);
        assert!(solar_zenith_deg(-32.0, 172, 0.0) > 90.0);
    }

    #[test]
    fn year_is_valid_and_seeded() {
        let y = demo_year(5);
        assert_eq!(y.dispatch.len(), 365 * 48);
        assert_eq!(y.weather.len(), y.dispatch.len());
        assert!(y.dispatch.iter().all(|d| d.validate().is_ok()));
        assert!(y.weather.iter().all(|w| w.validate().is_ok()));
        assert!(y.dispatch.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert_eq!(y.joined().len(), y.dispatch.len());
        assert_eq!(demo_year(5), y);
        assert_ne!(demo_year(6).dispatch, y.dispatch);
        // Night has no solar; some midday intervals are solar-dominated.
        assert!(y.dispatch.iter().filter(|d| d.timestamp.hour() == 0).all(|d| d.dpv_mw == 0.0));
        assert!(y.dispatch.iter().any(|d| d.dpv_mw > 0.6 * d.load_mw));
    }
}
