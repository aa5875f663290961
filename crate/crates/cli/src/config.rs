use std::path::{Path, PathBuf};

use mu2fl_core::privacy::TrustMode;
use mu2fl_core::verify::SuiteOptions;
use serde::{Deserialize, Serialize};

/// Experiment configuration read from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub account: AccountSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            run: RunSection::default(),
            verify: VerifySection::default(),
            account: AccountSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        dim: usize,
        #[serde(default)]
        heterogeneity: f64,
        #[serde(default)]
        noise_level: f64,
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        dim: usize,
        #[serde(default)]
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
    Mnist {
        /// Directory holding the four IDX files; falls back to `DP_MU2_MNIST_DIR`.
        #[serde(default)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: TrustMode,
    pub machines: usize,
    pub horizon: usize,
    /// Target privacy scale; omit both this and `sigma_sq` for a noiseless run.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Constant noise variance used as-is instead of calibrating to `rho`.
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default)]
    pub parallel: bool,
    pub problem: ProblemSpec,
}

fn default_deltas() -> Vec<f64> {
    vec![1e-5]
}

fn one() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: TrustMode::Untrusted,
            machines: 4,
            horizon: 200,
            rho: Some(4.0),
            sigma_sq: None,
            deltas: default_deltas(),
            eta: None,
            n_seeds: 1,
            parallel: false,
            problem: ProblemSpec::Quadratic {
                dim: 5,
                heterogeneity: 0.5,
                noise_level: 0.5,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "all_suites")]
    pub suites: Vec<String>,
    #[serde(default)]
    pub options: SuiteOptions,
}

fn all_suites() -> Vec<String> {
    vec!["all".to_string()]
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suites: all_suites(),
            options: SuiteOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountSection {
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub machines: Option<usize>,
    #[serde(default)]
    pub mode: Option<TrustMode>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json` (the echo in `result.json`).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}
