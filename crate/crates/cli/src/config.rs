//! Flat `key = value` run configuration.
//!
//! ```text
//! # dephasing with a driven ancilla
//! model.name  = dephasing_coherent
//! model.gamma = 1
//! model.delta = 6
//! model.rho0  = x_plus
//! grid.h      = 0.01
//! grid.t_max  = 10
//! traj.n      = 1000
//! traj.seed   = 42
//! obs         = coherence, populations
//! out.prefix  = runs/deph
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use qcm_core::linalg::Tolerances;
use qcm_core::models::{Params, MODEL_NAMES, STATE_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

const MODEL_PARAMS: [&str; 6] = ["gamma", "delta", "beta", "lambda", "p", "m"];

/// Observable shorthands accepted by `obs`.
pub const OBSERVABLES: [&str; 6] = [
    "coherence",
    "populations",
    "purity",
    "entropy",
    "ancilla",
    "auxiliary",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySettings {
    pub n_traj: usize,
    pub seed: u64,
    /// Trajectory indices whose single realization is written out.
    pub record: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub params: Params,
    pub rho0: String,
    pub h: f64,
    pub t_max: f64,
    pub trajectories: Option<TrajectorySettings>,
    pub observables: Vec<String>,
    pub prefix: String,
    pub tolerances: Tolerances,
}

/// Raw key/value pairs, in file order, later keys overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", n + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return err(format!("line {}: empty key", n + 1));
            }
            raw.set(k, v);
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let Some((k, v)) = pair.split_once('=') else {
            return err(format!("override `{pair}` is not key=value"));
        };
        self.set(k.trim(), v.trim());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ConfigError(format!("{key}: `{v}` is not a number")))
            })
            .transpose()
    }

    fn integer(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| ConfigError(format!("{key}: `{v}` is not a non-negative integer")))
            })
            .transpose()
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        for key in self.entries.keys() {
            let known = matches!(
                key.as_str(),
                "model.name"
                    | "model.rho0"
                    | "grid.h"
                    | "grid.t_max"
                    | "traj.n"
                    | "traj.seed"
                    | "traj.record"
                    | "obs"
                    | "out.prefix"
                    | "tol.herm"
                    | "tol.trace"
                    | "tol.psd"
            ) || key
                .strip_prefix("model.")
                .is_some_and(|p| MODEL_PARAMS.contains(&p));
            if !known {
                return err(format!("unknown key `{key}`"));
            }
        }
        let Some(model) = self.get("model.name") else {
            return err(format!(
                "model.name is required (one of: {})",
                MODEL_NAMES.join(", ")
            ));
        };
        if !MODEL_NAMES.contains(&model) {
            return err(format!(
                "unknown model `{model}` (valid models: {})",
                MODEL_NAMES.join(", ")
            ));
        }
        let mut params = Params::new();
        for p in MODEL_PARAMS {
            if let Some(v) = self.number(&format!("model.{p}"))? {
                params.insert(p.to_string(), v);
            }
        }
        let rho0 = self.get("model.rho0").unwrap_or("x_plus").to_string();
        if !STATE_NAMES.contains(&rho0.as_str()) {
            return err(format!(
                "unknown state `{rho0}` (valid states: {})",
                STATE_NAMES.join(", ")
            ));
        }

        let h = self.number("grid.h")?.unwrap_or(0.01);
        let t_max = self.number("grid.t_max")?.unwrap_or(10.0);
        if !(h > 0.0 && h.is_finite()) {
            return err(format!("grid.h must be positive, got {h}"));
        }
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return err(format!("grid.t_max must be non-negative, got {t_max}"));
        }

        let trajectories = match (self.integer("traj.n")?, self.integer("traj.seed")?) {
            (None, None) if self.get("traj.record").is_none() => None,
            (n, seed) => {
                let record = match self.get("traj.record") {
                    None | Some("") => Vec::new(),
                    Some(list) => list
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<u64>()
                                .map_err(|_| ConfigError(format!("traj.record: bad index `{s}`")))
                        })
                        .collect::<Result<_, _>>()?,
                };
                Some(TrajectorySettings {
                    n_traj: n.unwrap_or(1000) as usize,
                    seed: seed.unwrap_or(42),
                    record,
                })
            }
        };

        let observables: Vec<String> = match self.get("obs") {
            None => vec!["coherence".into(), "populations".into()],
            Some(list) => list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        };
        if observables.is_empty() {
            return err("obs selects no observables");
        }
        for o in &observables {
            if !OBSERVABLES.contains(&o.as_str()) {
                return err(format!(
                    "unknown observable `{o}` (valid: {})",
                    OBSERVABLES.join(", ")
                ));
            }
        }

        let mut tolerances = Tolerances::default();
        if let Some(v) = self.number("tol.herm")? {
            tolerances.herm = v;
        }
        if let Some(v) = self.number("tol.trace")? {
            tolerances.trace = v;
        }
        if let Some(v) = self.number("tol.psd")? {
            tolerances.psd = v;
        }

        Ok(RunConfig {
            model: model.to_string(),
            params,
            rho0,
            h,
            t_max,
            trajectories,
            observables,
            prefix: self.get("out.prefix").unwrap_or("qcm").to_string(),
            tolerances,
        })
    }
}
