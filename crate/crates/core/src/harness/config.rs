use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithms::{Algorithm, StepSchedule};
use crate::costs::HeterogeneityProfile;
use crate::error::{Error, Result};
use crate::metrics::Statistic;
use crate::noise::OracleSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> Error {
    ConfigError::Invalid(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring,
    Path,
    Complete,
    ErdosRenyi {
        p: f64,
    },
    /// Erdős–Rényi with the edge probability tuned to a target `lambda`.
    TunedErdosRenyi {
        target_lambda: f64,
        tol: f64,
    },
}

fn default_density() -> f64 {
    0.1
}

fn default_shift() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    SyntheticQuadratic {
        d: usize,
        profile: HeterogeneityProfile,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default = "default_shift")]
        shift: f64,
    },
    /// Regularized logistic regression on a LIBSVM file split evenly across agents.
    Logistic {
        path: String,
        #[serde(default = "default_eta")]
        eta: f64,
        /// Feature dimension; defaults to the largest index in the file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimension: Option<usize>,
        /// Scale every feature column to `[-1, 1]`.
        #[serde(default)]
        scale_features: bool,
    },
}

fn default_thresholds() -> Vec<f64> {
    vec![0.01]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

fn default_statistic() -> Statistic {
    Statistic::MseToOpt
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            statistic: default_statistic(),
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default)]
    pub descent: bool,
    #[serde(default)]
    pub descent_pl: bool,
    #[serde(default)]
    pub consensus: bool,
    #[serde(default)]
    pub tracker: bool,
    /// Monte-Carlo samples for the noise bounds; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_samples: Option<usize>,
}

impl ChecksSpec {
    pub fn needs_traces(&self) -> bool {
        self.descent || self.descent_pl || self.consensus || self.tracker
    }

    pub fn any(&self) -> bool {
        self.needs_traces() || self.noise_samples.is_some()
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub agents: usize,
    /// Repeat the experiment for each network size (speed-up studies).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_agents: Option<Vec<usize>>,
    pub iterations: usize,
    #[serde(default = "one")]
    pub runs: usize,
    pub algorithms: Vec<Algorithm>,
    pub topology: TopologySpec,
    pub costs: CostSpec,
    pub oracle: OracleSpec,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub metrics: MetricsSpec,
    /// Row stride of exported per-run trajectories.
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub export_runs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub checks: ChecksSpec,
    /// Directory relative paths are resolved against; set by [`load_config`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let cfg: Self = match format {
            ConfigFormat::Json => {
                let de = &mut serde_json::Deserializer::from_str(text);
                serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
                    path: e.path().to_string(),
                    message: e.inner().to_string(),
                })?
            }
            ConfigFormat::Toml => {
                let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Schema {
                    path: ".".into(),
                    message: e.to_string(),
                })?;
                serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
                    path: e.path().to_string(),
                    message: e.inner().message().to_string(),
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(invalid("agents must be at least 1"));
        }
        if let Some(sweep) = &self.sweep_agents {
            if sweep.is_empty() || sweep.contains(&0) {
                return Err(invalid("sweep_agents must list positive sizes"));
            }
        }
        if self.runs == 0 {
            return Err(invalid("runs must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("algorithms must not be empty"));
        }
        let mut algs = self.algorithms.clone();
        algs.sort();
        algs.dedup();
        if algs.len() != self.algorithms.len() {
            return Err(invalid("algorithms are listed twice"));
        }
        if self.metrics.thresholds.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("metric thresholds must be positive"));
        }
        self.schedule.validate().map_err(|e| invalid(e.to_string()))?;
        match &self.topology {
            TopologySpec::ErdosRenyi { p } if !(*p > 0.0 && *p <= 1.0) => {
                return Err(invalid("topology.p must lie in (0,1]"))
            }
            TopologySpec::TunedErdosRenyi { target_lambda, tol }
                if !(*target_lambda > 0.0 && *target_lambda < 1.0 && *tol > 0.0) =>
            {
                return Err(invalid("topology.target_lambda must lie in (0,1) and tol be positive"))
            }
            _ => {}
        }
        match &self.costs {
            CostSpec::SyntheticQuadratic { d, density, shift, .. } => {
                if *d == 0 || !(*density > 0.0 && *density <= 1.0) || !(*shift >= 0.0) {
                    return Err(invalid("costs: need d >= 1, density in (0,1], shift >= 0"));
                }
            }
            CostSpec::Logistic { eta, .. } => {
                if !(*eta >= 0.0) {
                    return Err(invalid("costs.eta must be nonnegative"));
                }
            }
        }
        if let Some(s) = self.checks.noise_samples {
            if s < crate::theorycheck::MIN_NOISE_SAMPLES {
                return Err(invalid(format!(
                    "checks.noise_samples must be at least {}",
                    crate::theorycheck::MIN_NOISE_SAMPLES
                )));
            }
        }
        Ok(())
    }

    /// Network sizes this experiment covers.
    pub fn agent_counts(&self) -> Vec<usize> {
        self.sweep_agents.clone().unwrap_or_else(|| vec![self.agents])
    }

    pub fn to_text(&self, format: ConfigFormat) -> Result<String> {
        match format {
            ConfigFormat::Json => serde_json::to_string_pretty(self)
                .map(|mut s| {
                    s.push('\n');
                    s
                })
                .map_err(|e| invalid(e.to_string())),
            ConfigFormat::Toml => toml::to_string(self).map_err(|e| invalid(e.to_string())),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Resolves a path from the config against the config's directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }
}

/// Reads and validates a TOML (default) or JSON (`.json`) config.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ExperimentConfig::parse(&text, ConfigFormat::from_path(path))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

pub fn save_config(cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = cfg.to_text(ConfigFormat::from_path(path))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Canonical text of a config: parsed, defaults filled, re-serialized.
pub fn normalize(text: &str, format: ConfigFormat) -> Result<String> {
    ExperimentConfig::parse(text, format)?.to_text(format)
}
