//! The run configuration document (TOML). Every section is optional and
//! falls back to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{read_parameter_overrides, BatteryError, CovarianceUpdate, ParameterSet};
use crate::dayahead::DayAheadConfig;
use crate::forecast::{SynthShape, MIN_SYNTH_DAYS};
use crate::mpc::MpcLimits;
use crate::sim::{MultiDaySetup, PlantConfig, SimSetup};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration document: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("battery parameter overrides: {0}")]
    Parameters(#[from] BatteryError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Historical dataset.
    pub history: Option<PathBuf>,
    /// Dispatch plan file.
    pub plan: Option<PathBuf>,
    /// Prosumption trace replayed in single-day runs.
    pub trace: Option<PathBuf>,
    /// Directory receiving run artifacts.
    pub out_dir: Option<PathBuf>,
    /// Battery parameter override table.
    pub parameters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Days generated by `synth`.
    pub history_days: usize,
    /// Days simulated in a chained run.
    pub days: usize,
    pub initial_soc: f64,
    /// Relative bias applied to every forecast of a chained run.
    pub forecast_bias: f64,
    pub covariance: CovarianceUpdate,
    pub paths: Paths,
    pub dayahead: DayAheadConfig,
    pub limits: MpcLimits,
    pub plant: PlantConfig,
    pub synth: SynthShape,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            history_days: 60,
            days: 3,
            initial_soc: 0.5,
            forecast_bias: 0.0,
            covariance: CovarianceUpdate::default(),
            paths: Paths::default(),
            dayahead: DayAheadConfig::default(),
            limits: MpcLimits::default(),
            plant: PlantConfig::default(),
            synth: SynthShape::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.dayahead.validate().map_err(|e| invalid(&e))?;
        self.limits.validate().map_err(|e| invalid(&e))?;
        self.plant.validate().map_err(|e| invalid(&e))?;
        if self.days == 0 {
            return Err(ConfigError::Invalid("days must be at least 1".into()));
        }
        if self.history_days < MIN_SYNTH_DAYS {
            return Err(ConfigError::Invalid(format!("history_days must be at least {MIN_SYNTH_DAYS}")));
        }
        if !(self.limits.soc_min..=self.limits.soc_max).contains(&self.initial_soc) {
            return Err(ConfigError::Invalid(format!(
                "initial_soc {} outside [{}, {}]",
                self.initial_soc, self.limits.soc_min, self.limits.soc_max
            )));
        }
        if !(self.forecast_bias.is_finite() && self.forecast_bias > -1.0) {
            return Err(ConfigError::Invalid("forecast_bias must be finite and above -1".into()));
        }
        Ok(())
    }

    /// Controller parameters: the built-in table with any configured overrides applied.
    pub fn parameters(&self) -> Result<ParameterSet, ConfigError> {
        let base = ParameterSet::default();
        match &self.paths.parameters {
            None => Ok(base),
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(read_parameter_overrides(file, &base)?)
            }
        }
    }

    pub fn sim_setup(&self, params: ParameterSet) -> SimSetup {
        SimSetup {
            plant: self.plant.clone(),
            limits: self.limits,
            covariance: self.covariance,
            params,
            seed: self.seed,
        }
    }

    pub fn multi_day_setup(&self, params: ParameterSet) -> MultiDaySetup {
        MultiDaySetup {
            sim: self.sim_setup(params),
            dayahead: self.dayahead,
            initial_soc: self.initial_soc,
            forecast_bias: self.forecast_bias,
            ..MultiDaySetup::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn snapshot_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.dayahead.p_max = Some(205.5);
        cfg.paths.out_dir = Some("runs/a".into());
        cfg.plant.param_perturbation = 0.0;
        cfg.covariance = CovarianceUpdate::Joseph;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 3\n[limits]\ni_max = 400.0\n[dayahead]\np_max = 210.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.limits.i_max, 400.0);
        assert_eq!(cfg.limits.i_min, MpcLimits::default().i_min);
        assert_eq!(cfg.dayahead.p_max, Some(210.0));
        assert_eq!(cfg.plant, PlantConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in ["sede = 1", "[limits]\nimax = 3.0", "[plant]\nnoise = 0.1", "[paths]\nhistroy = \"x\"", "[solver]\n"] {
            assert!(matches!(RunConfig::from_toml_str(doc), Err(ConfigError::Parse(_))), "{doc}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for doc in [
            "days = 0",
            "history_days = 10",
            "initial_soc = 0.95",
            "forecast_bias = -1.0",
            "[dayahead]\neta = 1.5",
            "[limits]\ni_min = 5.0",
            "[plant]\nvoltage_noise_sd = -0.1",
        ] {
            assert!(matches!(RunConfig::from_toml_str(doc), Err(ConfigError::Invalid(_))), "{doc}");
        }
    }

    #[test]
    fn parameter_overrides_are_applied() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.csv");
        let mut base = ParameterSet::default();
        base.0[0].rs *= 2.0;
        crate::battery::write_parameter_table(std::fs::File::create(&path).unwrap(), &base).unwrap();
        let cfg = RunConfig {
            paths: Paths {
                parameters: Some(path),
                ..Paths::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(cfg.parameters().unwrap(), base);
        let missing = RunConfig {
            paths: Paths {
                parameters: Some(dir.path().join("none.csv")),
                ..Paths::default()
            },
            ..RunConfig::default()
        };
        assert!(matches!(missing.parameters(), Err(ConfigError::Io { .. })));
    }
}
