//! Run configuration.
//!
//! A TOML file with a top-level `seed`, `[params]`, `[acquisition]`,
//! `[analysis]` and one `[[sources]]` table per bit string. Physical
//! quantities are strings carrying a unit (`"3 V"`, `"-0.306 nV"`, `"1 ms"`);
//! see [`crate::units`]. Omitted acquisition and analysis keys take the
//! defaults of [`AcquisitionConfig`] and [`AnalysisConfig`].
//!
//! ```toml
//! seed = 20211115
//!
//! [params]
//! eps_gamma = 0.0
//! vs = "-0.306 nV"
//!
//! [[sources]]
//! id = "c1"
//! kind = "classical"
//! count = 60000
//!
//! [[sources]]
//! id = "q3"
//! kind = "qubit"
//! fidelity = 0.55
//! repetitions = 50
//! count = 10717
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::BoundRule;
use crate::model::{FidelityModel, Interpretation, NonlinearParams};
use crate::signal::{AcquisitionConfig, AcquisitionMode};
use crate::sources::{SourceKind, SourceSpec};
use crate::units::{parse_quantity, Dimension};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config value {field}: {msg}")]
    Value { field: String, msg: String },
    #[error("config: {0}")]
    Invalid(String),
}

fn value_err(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value {
        field: field.to_string(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub threshold: f64,
    pub n_bins: usize,
    pub mc_realizations: usize,
    pub cl: f64,
    pub bound_rule: BoundRule,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            n_bins: 60,
            mc_realizations: 10_000,
            cl: 0.90,
            bound_rule: BoundRule::Gaussian,
        }
    }
}

/// A configured bit source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub spec: SourceSpec,
    /// Readout model behind the fidelity; repetitive readout when
    /// `n_repetitions > 1`.
    pub readout: FidelityModel,
    /// Externally produced bit file to ingest instead of generating bits.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sources: Vec<SourceConfig>,
    pub params: NonlinearParams,
    pub acquisition: AcquisitionConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    output_dir: Option<PathBuf>,
    params: RawParams,
    #[serde(default)]
    acquisition: RawAcquisition,
    #[serde(default)]
    analysis: RawAnalysis,
    #[serde(default)]
    sources: Vec<RawSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    eps_gamma: f64,
    v0: Option<String>,
    v1: Option<String>,
    vs: Option<String>,
    interpretation: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAcquisition {
    mode: Option<String>,
    cycle_duration: Option<String>,
    record_window: Option<String>,
    sample_rate: Option<String>,
    filter_tau: Option<String>,
    carrier_freq: Option<String>,
    sigma_low: Option<String>,
    sigma_high: Option<String>,
    range_threshold: Option<String>,
    drift_rate: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    threshold: Option<String>,
    n_bins: Option<usize>,
    mc_realizations: Option<usize>,
    cl: Option<f64>,
    bound_rule: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    id: String,
    kind: String,
    fidelity: Option<f64>,
    count: usize,
    repetitions: Option<u32>,
    file: Option<PathBuf>,
}

fn quantity(field: &str, raw: &Option<String>, dim: Dimension, default: f64) -> Result<f64, ConfigError> {
    match raw {
        Some(s) => parse_quantity(s, dim).map_err(|m| value_err(field, m)),
        None => Ok(default),
    }
}

impl RunConfig {
    /// Constants of the published run: 60000 classical bits, 30000 bits at
    /// 99% fidelity, 10717 bits at 55% from 50-fold repetitive readout.
    pub fn paper(seed: u64, eps_gamma: f64) -> Self {
        let sources = vec![
            SourceConfig {
                spec: SourceSpec::classical("c1", 60_000).expect("valid"),
                readout: FidelityModel::direct(0.5).expect("valid"),
                file: None,
            },
            SourceConfig {
                spec: SourceSpec::qubit("q2", 0.99, 30_000).expect("valid"),
                readout: FidelityModel::direct(0.99).expect("valid"),
                file: None,
            },
            SourceConfig {
                spec: SourceSpec::qubit("q3", 0.55, 10_717).expect("valid"),
                readout: FidelityModel::from_net(0.55, 50).expect("valid"),
                file: None,
            },
        ];
        Self {
            seed,
            sources,
            params: NonlinearParams::with_eps(eps_gamma, -0.306e-9).expect("valid"),
            acquisition: AcquisitionConfig::default(),
            analysis: AnalysisConfig::default(),
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // bit files are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sources {
            if let Some(f) = &s.file {
                if f.is_relative() {
                    s.file = Some(base.join(f));
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;

        let p = &raw.params;
        let interpretation = match p.interpretation.as_deref() {
            None | Some("everett") => Interpretation::Everett,
            Some("copenhagen") => Interpretation::Copenhagen,
            Some(other) => return Err(value_err("params.interpretation", format!("unknown {other:?}"))),
        };
        let params = NonlinearParams::new(
            p.eps_gamma,
            quantity("params.v0", &p.v0, Dimension::Voltage, 0.0)?,
            quantity("params.v1", &p.v1, Dimension::Voltage, 3.0)?,
            quantity("params.vs", &p.vs, Dimension::Voltage, 0.0)?,
            interpretation,
        )
        .map_err(|e| value_err("params", e))?;

        let a = &raw.acquisition;
        let d = AcquisitionConfig::default();
        let acquisition = AcquisitionConfig {
            mode: match a.mode.as_deref() {
                None | Some("fast") => AcquisitionMode::Fast,
                Some("waveform") => AcquisitionMode::Waveform,
                Some(other) => return Err(value_err("acquisition.mode", format!("unknown {other:?}"))),
            },
            cycle_duration: quantity("acquisition.cycle_duration", &a.cycle_duration, Dimension::Time, d.cycle_duration)?,
            record_window: quantity("acquisition.record_window", &a.record_window, Dimension::Time, d.record_window)?,
            sample_rate: quantity("acquisition.sample_rate", &a.sample_rate, Dimension::Frequency, d.sample_rate)?,
            filter_tau: quantity("acquisition.filter_tau", &a.filter_tau, Dimension::Time, d.filter_tau)?,
            carrier_freq: quantity("acquisition.carrier_freq", &a.carrier_freq, Dimension::Frequency, d.carrier_freq)?,
            sigma_low: quantity("acquisition.sigma_low", &a.sigma_low, Dimension::Voltage, d.sigma_low)?,
            sigma_high: quantity("acquisition.sigma_high", &a.sigma_high, Dimension::Voltage, d.sigma_high)?,
            range_threshold: quantity(
                "acquisition.range_threshold",
                &a.range_threshold,
                Dimension::Voltage,
                d.range_threshold,
            )?,
            drift_rate: quantity("acquisition.drift_rate", &a.drift_rate, Dimension::VoltageRate, d.drift_rate)?,
        };
        acquisition.validate().map_err(|e| value_err("acquisition", e))?;

        let an = &raw.analysis;
        let da = AnalysisConfig::default();
        let analysis = AnalysisConfig {
            threshold: quantity("analysis.threshold", &an.threshold, Dimension::Voltage, da.threshold)?,
            n_bins: an.n_bins.unwrap_or(da.n_bins),
            mc_realizations: an.mc_realizations.unwrap_or(da.mc_realizations),
            cl: an.cl.unwrap_or(da.cl),
            bound_rule: match &an.bound_rule {
                Some(s) => s.parse().map_err(|m| value_err("analysis.bound_rule", m))?,
                None => da.bound_rule,
            },
        };

        let mut sources = Vec::with_capacity(raw.sources.len());
        for (i, s) in raw.sources.iter().enumerate() {
            let field = format!("sources[{i}]");
            let kind: SourceKind = s.kind.parse().map_err(|m| value_err(&field, m))?;
            let fidelity = match (kind, s.fidelity) {
                (SourceKind::Classical, f) => f.unwrap_or(0.5),
                (SourceKind::Qubit, Some(f)) => f,
                (SourceKind::Qubit, None) => return Err(value_err(&field, "qubit source needs a fidelity")),
            };
            let spec = SourceSpec::new(s.id.clone(), kind, fidelity, s.count).map_err(|e| value_err(&field, e))?;
            let readout = match s.repetitions {
                None | Some(1) => FidelityModel::direct(fidelity),
                Some(n) => FidelityModel::from_net(fidelity, n),
            }
            .map_err(|e| value_err(&field, e))?;
            sources.push(SourceConfig {
                spec,
                readout,
                file: s.file.clone(),
            });
        }

        let cfg = Self {
            seed: raw.seed,
            sources,
            params,
            acquisition,
            analysis,
            output_dir: raw.output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sources.is_empty() {
            return Err(ConfigError::Invalid("at least one [[sources]] entry is required".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].iter().any(|t| t.spec.id() == s.spec.id()) {
                return Err(ConfigError::Invalid(format!("duplicate source id {:?}", s.spec.id())));
            }
        }
        self.acquisition
            .validate()
            .map_err(|e| value_err("acquisition", e))?;
        let a = &self.analysis;
        if a.n_bins == 0 {
            return Err(value_err("analysis.n_bins", "must be at least 1"));
        }
        if a.mc_realizations < crate::analysis::MIN_REALIZATIONS {
            return Err(value_err(
                "analysis.mc_realizations",
                format!("must be at least {}", crate::analysis::MIN_REALIZATIONS),
            ));
        }
        if !(a.cl > 0.0 && a.cl < 1.0) {
            return Err(value_err("analysis.cl", "must lie in (0, 1)"));
        }
        if !(a.threshold > self.params.v0() && a.threshold < self.params.v1()) {
            return Err(value_err("analysis.threshold", "must lie between v0 and v1"));
        }
        Ok(())
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.spec.id()).collect()
    }

    pub fn specs(&self) -> Vec<SourceSpec> {
        self.sources.iter().map(|s| s.spec.clone()).collect()
    }
}
