//! Forecasting ESS/DPV ratios and inertia levels from weather, market and
//! system features with a bagged regression-tree forest, plus Pearson
//! correlation reports.

mod forest;
mod stats;
mod tree;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqsim::{rocof, SimConfig};
use crate::market_data::{DispatchInterval, JoinedInterval};
use crate::metrics::{ess_lower_dpv, ess_raise_dpv};

pub use forest::{train_forest, ForestModel, ForestParams};
pub use stats::{pearson, Correlation};
pub use tree::TreeNode;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

pub const WEATHER_FEATURES: [&str; 6] =
    ["air_temp_c", "zenith_deg", "cloud_opacity", "dhi_wm2", "ghi_wm2", "wind_speed_ms"];
pub const MARKET_FEATURES: [&str; 2] = ["energy_injection_mw", "energy_withdrawal_mw"];
pub const SYSTEM_FEATURES: [&str; 1] = ["dpv_mw"];

/// Named feature values. Ordered by name, which fixes the model's column order.
pub type FeatureVector = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub target: f64,
}

/// Which feature groups enter a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub weather: bool,
    pub market: bool,
    pub system: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet { weather: true, market: true, system: true };
    /// Weather and market features, the inputs of the ESS ratio models.
    pub const WEATHER_MARKET: FeatureSet = FeatureSet { weather: true, market: true, system: false };

    /// Features of one joined interval. Energy withdrawal is included only
    /// when the interval carries it.
    pub fn extract(&self, r: &JoinedInterval) -> FeatureVector {
        let mut f = FeatureVector::new();
        let w = &r.weather;
        if self.weather {
            for (name, v) in WEATHER_FEATURES.iter().zip([
                w.air_temp_c,
                w.zenith_deg,
                w.cloud_opacity,
                w.dhi_wm2,
                w.ghi_wm2,
                w.wind_speed_ms,
            ]) {
                f.insert(name.to_string(), v);
            }
        }
        if self.market {
            f.insert(MARKET_FEATURES[0].to_string(), r.dispatch.energy_injection_mw);
            if let Some(v) = r.dispatch.energy_withdrawal_mw {
                f.insert(MARKET_FEATURES[1].to_string(), v);
            }
        }
        if self.system {
            f.insert(SYSTEM_FEATURES[0].to_string(), r.dispatch.dpv_mw);
        }
        f
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    /// Comma-separated group names, e.g. `weather,market`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = FeatureSet { weather: false, market: false, system: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "weather" => set.weather = true,
                "market" => set.market = true,
                "system" => set.system = true,
                "all" => set = FeatureSet::ALL,
                other => return Err(Error::Config(format!("unknown feature group `{other}`"))),
            }
        }
        if set == (FeatureSet { weather: false, market: false, system: false }) {
            return Err(Error::Config("empty feature set".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    EssRaiseDpv,
    EssLowerDpv,
    /// RoCoF-control inertia level, MWs.
    RocofControl,
    /// Initial RoCoF (Hz/s) of a deficit of 1.1 x ESS Raise against
    /// `K_gen + K_load`.
    RocofHzPerS,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::EssRaiseDpv, Target::EssLowerDpv, Target::RocofControl, Target::RocofHzPerS];

    pub fn name(self) -> &'static str {
        match self {
            Target::EssRaiseDpv => "ess_raise_dpv",
            Target::EssLowerDpv => "ess_lower_dpv",
            Target::RocofControl => "rocof_control_mws",
            Target::RocofHzPerS => "rocof_hz_per_s",
        }
    }

    pub fn value(self, d: &DispatchInterval, config: &SimConfig) -> Result<f64> {
        match self {
            Target::EssRaiseDpv => ess_raise_dpv(d),
            Target::EssLowerDpv => ess_lower_dpv(d),
            Target::RocofControl => Ok(d.rocof_control_mws),
            Target::RocofHzPerS => rocof(-1.1 * d.ess_raise_mw(), config.k_sys(d.rocof_control_mws, d.load_mw), config.f_n_hz),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s || (s == "rocof" && *t == Target::RocofControl))
            .ok_or_else(|| Error::Config(format!("unknown target `{s}`")))
    }
}

/// One sample per joined interval.
pub fn build_samples(records: &[JoinedInterval], features: FeatureSet, target: Target, config: &SimConfig) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| Ok(Sample { features: features.extract(r), target: target.value(&r.dispatch, config)? }))
        .collect()
}

/// Shuffle under `seed` and cut after `floor(n * train_fraction)` rows.
pub fn split_dataset<T: Clone>(rows: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if rows.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 rows to split, got {}", rows.len())));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The guard keeps products such as 30270 * 0.7 = 21188.999... on the
    // intended side of the floor.
    let exact = rows.len() as f64 * train_fraction;
    let n_train = (exact + exact * 4.0 * f64::EPSILON).floor() as usize;
    let train = order[..n_train].iter().map(|&i| rows[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| rows[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `None` when the test targets have zero variance.
    pub r_squared: Option<f64>,
    pub mean_abs_error: f64,
    pub n: usize,
}

pub fn evaluate(model: &ForestModel, test: &[Sample]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let predicted = test.iter().map(|s| model.predict(&s.features)).collect::<Result<Vec<_>>>()?;
    let actual: Vec<f64> = test.iter().map(|s| s.target).collect();
    Ok(score(&actual, &predicted))
}

/// R² and MAE of `predicted` against `actual`.
pub fn score(actual: &[f64], predicted: &[f64]) -> Evaluation {
    let n = actual.len();
    let mean = actual.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    let mae = actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum::<f64>() / n as f64;
    Evaluation { r_squared: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot), mean_abs_error: mae, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub target: String,
    /// `None` when either series has zero variance.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
}

/// Pearson r of every weather/market feature against both ESS/DPV ratios.
/// Records should already pass the DPV floor.
pub fn correlation_report(records: &[JoinedInterval]) -> Result<Vec<CorrelationRow>> {
    correlation_table(records, FeatureSet::WEATHER_MARKET, &[Target::EssRaiseDpv, Target::EssLowerDpv], &SimConfig::default())
}

/// Pearson r of each feature in `features` against each of `targets`.
/// A feature absent from any record (no withdrawal column) is left out.
pub fn correlation_table(
    records: &[JoinedInterval],
    features: FeatureSet,
    targets: &[Target],
    config: &SimConfig,
) -> Result<Vec<CorrelationRow>> {
    let mut names: Vec<&str> = Vec::new();
    if features.market {
        names.push(MARKET_FEATURES[0]);
    }
    if features.weather {
        names.extend(WEATHER_FEATURES);
    }
    if features.market && !records.is_empty() && records.iter().all(|r| r.dispatch.energy_withdrawal_mw.is_some()) {
        names.push(MARKET_FEATURES[1]);
    }
    if features.system {
        names.extend(SYSTEM_FEATURES);
    }
    let rows: Vec<FeatureVector> = records.iter().map(|r| FeatureSet::ALL.extract(r)).collect();
    let mut out = Vec::new();
    for target in targets {
        let y = records.iter().map(|r| target.value(&r.dispatch, config)).collect::<Result<Vec<_>>>()?;
        for feature in &names {
            let x: Vec<f64> = rows.iter().map(|f| f[*feature]).collect();
            let c = pearson(&x, &y).ok();
            out.push(CorrelationRow {
                feature: feature.to_string(),
                target: target.name().to_string(),
                r: c.map(|c| c.r),
                p_value: c.map(|c| c.p_value),
                n: records.len(),
            });
        }
    }
    Ok(out)
}

pub fn write_correlation_csv<W: Write>(writer: W, rows: &[CorrelationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "target", "r", "p_value", "n"])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in rows {
        w.write_record([r.feature.clone(), r.target.clone(), opt(r.r), opt(r.p_value), r.n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<correlation output>", e))?;
    Ok(())
}

pub fn write_importance_csv<W: Write>(writer: W, model: &ForestModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "importance"])?;
    let mut ranked: Vec<(&String, f64)> = model.feature_names.iter().zip(model.importance.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    for (name, share) in ranked {
        w.write_record([name.clone(), share.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<importance output>", e))?;
    Ok(())
}
