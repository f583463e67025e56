//! Flat `key = value` run configuration.
//!
//! Every key is optional; unknown keys are rejected so typos surface.
//!
//! | key | meaning |
//! |-----|---------|
//! | `f_n_hz`, `step_s`, `horizon_s` | simulator basics |
//! | `c0_mws`, `c1_s` | load-inertia model |
//! | `tau_raise_s`, `tau_lower_s` | effective reserve speed factors |
//! | `emergency_actions_enabled` | shed load / stop on OFGS |
//! | `ufls_thresholds_hz`, `ufls_shed_fractions` | arrays, one entry per stage |
//! | `ufls_reaction_s`, `ofgs_threshold_hz` | relay delay and OFGS level |
//! | `overshoot` | attack size over the opposing ESS |
//! | `raise_ratio_max`, `lower_ratio_max`, `rocof_max_mws` | scan thresholds |
//! | `dpv_floor_mw`, `join_tolerance_s` | data preparation |
//! | `n_trees`, `max_depth`, `min_samples_leaf`, `features_per_split`, `bootstrap` | forest |
//! | `train_fraction`, `seed` | train/test split and randomness |

use std::collections::BTreeMap;
use std::path::Path;

use crate::attack::DEFAULT_OVERSHOOT;
use crate::error::{Error, Result};
use crate::forecast::{ForestParams, DEFAULT_TRAIN_FRACTION};
use crate::freqsim::{Calibration, SimConfig, UflsStage};
use crate::market_data::{Direction, DEFAULT_DPV_FLOOR_MW, DEFAULT_JOIN_TOLERANCE_S};
use crate::metrics::ScanThresholds;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub forest: ForestParams,
    pub overshoot: f64,
    pub raise_scan: ScanThresholds,
    pub lower_scan: ScanThresholds,
    pub dpv_floor_mw: f64,
    pub join_tolerance_s: i64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            forest: ForestParams::default(),
            overshoot: DEFAULT_OVERSHOOT,
            raise_scan: ScanThresholds::defaults(Direction::Raise),
            lower_scan: ScanThresholds::defaults(Direction::Lower),
            dpv_floor_mw: DEFAULT_DPV_FLOOR_MW,
            join_tolerance_s: DEFAULT_JOIN_TOLERANCE_S,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: DEFAULT_SEED,
        }
    }
}

fn number(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

fn integer(key: &str, v: &toml::Value) -> Result<u64> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
}

fn boolean(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::Config(format!("`{key}` must be true or false")))
}

fn numbers(key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Config(format!("`{key}` must be an array")))?
        .iter()
        .map(|x| number(key, x))
        .collect()
}

/// `none` (string) or a non-negative integer.
fn optional(key: &str, v: &toml::Value) -> Result<Option<usize>> {
    match v.as_str() {
        Some("none") => Ok(None),
        _ => integer(key, v).map(|i| Some(i as usize)),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut c = RunConfig::default();
        let mut thresholds: Option<Vec<f64>> = None;
        let mut fractions: Option<Vec<f64>> = None;
        for (key, v) in &table {
            let k = key.as_str();
            match k {
                "f_n_hz" => c.sim.f_n_hz = number(k, v)?,
                "step_s" => c.sim.step_s = number(k, v)?,
                "horizon_s" => c.sim.horizon_s = number(k, v)?,
                "c0_mws" => c.sim.inertia_model.c0_mws = number(k, v)?,
                "c1_s" => c.sim.inertia_model.c1_s = number(k, v)?,
                "tau_raise_s" => c.sim.tau_raise_s = number(k, v)?,
                "tau_lower_s" => c.sim.tau_lower_s = number(k, v)?,
                "emergency_actions_enabled" => c.sim.emergency_actions_enabled = boolean(k, v)?,
                "ufls_thresholds_hz" => thresholds = Some(numbers(k, v)?),
                "ufls_shed_fractions" => fractions = Some(numbers(k, v)?),
                "ufls_reaction_s" => c.sim.scheme.ufls_reaction_s = number(k, v)?,
                "ofgs_threshold_hz" => c.sim.scheme.ofgs_threshold_hz = number(k, v)?,
                "overshoot" => c.overshoot = number(k, v)?,
                "raise_ratio_max" => c.raise_scan.ratio_max = number(k, v)?,
                "lower_ratio_max" => c.lower_scan.ratio_max = number(k, v)?,
                "rocof_max_mws" => {
                    let r = number(k, v)?;
                    c.raise_scan.rocof_max_mws = r;
                    c.lower_scan.rocof_max_mws = r;
                }
                "dpv_floor_mw" => c.dpv_floor_mw = number(k, v)?,
                "join_tolerance_s" => c.join_tolerance_s = integer(k, v)? as i64,
                "n_trees" => c.forest.n_trees = integer(k, v)? as usize,
                "max_depth" => c.forest.max_depth = optional(k, v)?,
                "min_samples_leaf" => c.forest.min_samples_leaf = integer(k, v)? as usize,
                "features_per_split" => c.forest.features_per_split = optional(k, v)?,
                "bootstrap" => c.forest.bootstrap = boolean(k, v)?,
                "train_fraction" => c.train_fraction = number(k, v)?,
                "seed" => c.seed = integer(k, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        if thresholds.is_some() || fractions.is_some() {
            let n = thresholds.as_ref().or(fractions.as_ref()).map_or(0, Vec::len);
            let thresholds = thresholds.unwrap_or_else(|| c.sim.scheme.ufls_stages.iter().map(|s| s.threshold_hz).collect());
            let fractions = fractions.unwrap_or_else(|| vec![c.sim.scheme.ufls_stages[0].shed_fraction; n]);
            if thresholds.len() != fractions.len() {
                return Err(Error::Config("ufls_thresholds_hz and ufls_shed_fractions differ in length".into()));
            }
            c.sim.scheme.ufls_stages = thresholds
                .into_iter()
                .zip(fractions)
                .map(|(threshold_hz, shed_fraction)| UflsStage { threshold_hz, shed_fraction })
                .collect();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if !(self.overshoot > 1.0) {
            return Err(Error::Config(format!("overshoot must exceed 1, got {}", self.overshoot)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.dpv_floor_mw >= 0.0) {
            return Err(Error::Config("dpv_floor_mw must be non-negative".into()));
        }
        Ok(())
    }

    /// Every setting as `key -> value`, in the file syntax.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let s = &self.sim;
        let opt = |v: Option<usize>| v.map_or_else(|| "\"none\"".to_string(), |v| v.to_string());
        let list = |v: Vec<f64>| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
        let pairs: Vec<(&str, String)> = vec![
            ("f_n_hz", format!("{:?}", s.f_n_hz)),
            ("step_s", format!("{:?}", s.step_s)),
            ("horizon_s", format!("{:?}", s.horizon_s)),
            ("c0_mws", format!("{:?}", s.inertia_model.c0_mws)),
            ("c1_s", format!("{:?}", s.inertia_model.c1_s)),
            ("tau_raise_s", format!("{:?}", s.tau_raise_s)),
            ("tau_lower_s", format!("{:?}", s.tau_lower_s)),
            ("emergency_actions_enabled", s.emergency_actions_enabled.to_string()),
            ("ufls_thresholds_hz", list(s.scheme.ufls_stages.iter().map(|x| x.threshold_hz).collect())),
            ("ufls_shed_fractions", list(s.scheme.ufls_stages.iter().map(|x| x.shed_fraction).collect())),
            ("ufls_reaction_s", format!("{:?}", s.scheme.ufls_reaction_s)),
            ("ofgs_threshold_hz", format!("{:?}", s.scheme.ofgs_threshold_hz)),
            ("overshoot", format!("{:?}", self.overshoot)),
            ("raise_ratio_max", format!("{:?}", self.raise_scan.ratio_max)),
            ("lower_ratio_max", format!("{:?}", self.lower_scan.ratio_max)),
            ("rocof_max_mws", format!("{:?}", self.raise_scan.rocof_max_mws)),
            ("dpv_floor_mw", format!("{:?}", self.dpv_floor_mw)),
            ("join_tolerance_s", self.join_tolerance_s.to_string()),
            ("n_trees", self.forest.n_trees.to_string()),
            ("max_depth", opt(self.forest.max_depth)),
            ("min_samples_leaf", self.forest.min_samples_leaf.to_string()),
            ("features_per_split", opt(self.forest.features_per_split)),
            ("bootstrap", self.forest.bootstrap.to_string()),
            ("train_fraction", format!("{:?}", self.train_fraction)),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_toml_string(&self) -> String {
        self.resolved().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Config fragment carrying a calibration result; loadable with `--config`.
pub fn calibration_fragment(cal: &Calibration) -> String {
    let mut out = String::from("# fitted load-inertia model and reserve speed factors\n");
    out.push_str(&format!("c0_mws = {:?}\n", cal.model.c0_mws));
    out.push_str(&format!("c1_s = {:?}\n", cal.model.c1_s));
    if let Some(t) = cal.tau_raise_s {
        out.push_str(&format!("tau_raise_s = {t:?}\n"));
    }
    if let Some(t) = cal.tau_lower_s {
        out.push_str(&format!("tau_lower_s = {t:?}\n"));
    }
    out
}
