//! Effective run configuration: defaults, then the file named by `QBL_CONFIG`,
//! then command-line flags.

use std::fs;

use quiver_bl::objective::NumericConfig;
use quiver_bl::oracle::OracleConfig;
use quiver_bl::scaling::ScalingConfig;
use quiver_bl::stability::{ClassifyConfig, DegenerationConfig};
use quiver_bl::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "QBL_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Human,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub singularity_floor: f64,
    pub seed: u64,
    pub output_mode: OutputMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = ScalingConfig::default();
        RunConfig {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            singularity_floor: s.singularity_floor,
            seed: 0,
            output_mode: OutputMode::Human,
        }
    }
}

/// Partial config as read from a file; absent fields keep their defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub singularity_floor: Option<f64>,
    pub seed: Option<u64>,
    pub output_mode: Option<OutputMode>,
}

impl ConfigFile {
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            None => Ok(ConfigFile::default()),
            Some(path) => {
                let path = std::path::PathBuf::from(path);
                let text = fs::read_to_string(&path).map_err(|e| {
                    Error::InvalidInput(format!("{CONFIG_ENV}={}: {e}", path.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
            }
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Default)]
pub struct Overrides {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub seed: Option<u64>,
    pub json: bool,
}

impl RunConfig {
    pub fn resolve(file: ConfigFile, flags: &Overrides) -> Result<Self> {
        let d = RunConfig::default();
        let cfg = RunConfig {
            tolerance: flags.tolerance.or(file.tolerance).unwrap_or(d.tolerance),
            max_iterations: flags
                .max_iterations
                .or(file.max_iterations)
                .unwrap_or(d.max_iterations),
            singularity_floor: file.singularity_floor.unwrap_or(d.singularity_floor),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            output_mode: if flags.json {
                OutputMode::Json
            } else {
                file.output_mode.unwrap_or(d.output_mode)
            },
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.singularity_floor >= 0.0 && self.singularity_floor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "singularity_floor must be non-negative, got {}",
                self.singularity_floor
            )));
        }
        Ok(())
    }

    pub fn numeric(&self) -> NumericConfig {
        NumericConfig {
            singularity_floor: self.singularity_floor,
            ..NumericConfig::default()
        }
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            singularity_floor: self.singularity_floor,
            numeric: self.numeric(),
            ..ScalingConfig::default()
        }
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            seed: self.seed,
            numeric: self.numeric(),
            ..OracleConfig::default()
        }
    }

    pub fn classify(&self) -> ClassifyConfig {
        ClassifyConfig {
            scaling: self.scaling(),
            ..ClassifyConfig::default()
        }
    }

    pub fn degeneration(&self) -> DegenerationConfig {
        DegenerationConfig {
            scaling: self.scaling(),
            ..DegenerationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigFile {
            tolerance: Some(1e-6),
            seed: Some(7),
            ..ConfigFile::default()
        };
        let flags = Overrides {
            seed: Some(9),
            json: true,
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(file, &flags).unwrap();
        assert_eq!(cfg.tolerance, 1e-6);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.max_iterations, 10_000);
        assert_eq!(cfg.output_mode, OutputMode::Json);
    }

    #[test]
    fn invalid_values_rejected() {
        let flags = Overrides {
            tolerance: Some(0.0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(ConfigFile::default(), &flags).is_err());
        let flags = Overrides {
            max_iterations: Some(0),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(ConfigFile::default(), &flags).is_err());
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"tol": 1}"#).is_err());
        let f: ConfigFile = serde_json::from_str(r#"{"output_mode": "json"}"#).unwrap();
        assert_eq!(f.output_mode, Some(OutputMode::Json));
    }
}
