//! Experiment configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::BetaSource;
use crate::data::PartitionCase;
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::transport::TransportKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Fedveca,
    Fedavg,
    Fednova,
    Centralized,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Fedveca => "fedveca",
            Algo::Fedavg => "fedavg",
            Algo::Fednova => "fednova",
            Algo::Centralized => "centralized",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedveca" => Ok(Algo::Fedveca),
            "fedavg" => Ok(Algo::Fedavg),
            "fednova" => Ok(Algo::Fednova),
            "centralized" => Ok(Algo::Centralized),
            other => Err(Error::Config {
                field: "algo".into(),
                reason: format!("unknown algorithm {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model_kind")]
    pub kind: ModelKind,
    #[serde(default)]
    pub l2_reg: f64,
}

fn default_model_kind() -> ModelKind {
    ModelKind::SquaredSvm
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: default_model_kind(),
            l2_reg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n: usize,
        d: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        separation: f64,
        #[serde(default = "default_test_n")]
        test_n: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Relabel digits as even (0) / odd (1).
        #[serde(default)]
        parity: bool,
    },
}

fn default_classes() -> usize {
    2
}

fn default_test_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::algo")]
    pub algo: Algo,
    #[serde(default)]
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    #[serde(default = "defaults::partition")]
    pub partition: PartitionCase,
    #[serde(default = "defaults::n_clients")]
    pub n_clients: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: u32,
    #[serde(default = "defaults::tau_initial")]
    pub tau_initial: u32,
    #[serde(default = "defaults::max_tau")]
    pub max_tau: u32,
    /// Returned by the delta estimate when the previous global gradient has
    /// vanished; defaults to `10 * max_tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_cap: Option<f64>,
    #[serde(default)]
    pub beta_source: BetaSource,
    /// Explicit per-client step counts for the fixed-step baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tau: Option<Vec<u32>>,
    /// Explicit iteration budget for the centralized baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_all: Option<u64>,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::output")]
    pub output: PathBuf,
    #[serde(default = "defaults::transport", with = "transport_serde")]
    pub transport: TransportKind,
}

mod defaults {
    use super::*;

    pub fn algo() -> Algo {
        Algo::Fedveca
    }
    pub fn partition() -> PartitionCase {
        PartitionCase::Case1
    }
    pub fn n_clients() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn eta() -> f64 {
        0.01
    }
    pub fn alpha() -> f64 {
        0.95
    }
    pub fn rounds() -> u32 {
        100
    }
    pub fn tau_initial() -> u32 {
        5
    }
    pub fn max_tau() -> u32 {
        50
    }
    pub fn seeds() -> Vec<u64> {
        vec![1]
    }
    pub fn output() -> PathBuf {
        PathBuf::from("metrics.csv")
    }
    pub fn transport() -> TransportKind {
        TransportKind::InProcess
    }
}

mod transport_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &TransportKind, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TransportKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// A synthetic-blob experiment with every other field at its default.
    pub fn synthetic(n: usize, d: usize, classes: usize, separation: f64) -> Self {
        Self::from_toml(&format!(
            "[dataset]\nsource = \"synthetic\"\nn = {n}\nd = {d}\nclasses = {classes}\nseparation = {separation:?}\n"
        ))
        .expect("synthetic defaults are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn delta_cap(&self) -> f64 {
        self.delta_cap.unwrap_or(10.0 * self.max_tau as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.rounds < 1 {
            return Err(invalid("rounds", "must be >= 1"));
        }
        if self.rounds >= 1 << 16 {
            return Err(invalid("rounds", "must be < 65536"));
        }
        if self.tau_initial < 2 || self.tau_initial > self.max_tau {
            return Err(invalid(
                "tau_initial",
                format!("must satisfy 2 <= tau_initial <= max_tau ({}), got {}", self.max_tau, self.tau_initial),
            ));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.n_clients < 1 || self.n_clients >= 1 << 16 {
            return Err(invalid("n_clients", format!("must lie in [1, 65535], got {}", self.n_clients)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if !(self.model.l2_reg >= 0.0) {
            return Err(invalid("model.l2_reg", "must be >= 0"));
        }
        if let Some(cap) = self.delta_cap {
            if !(cap >= 0.0) {
                return Err(invalid("delta_cap", "must be >= 0"));
            }
        }
        if let Some(t) = &self.fixed_tau {
            if t.len() != self.n_clients || t.contains(&0) {
                return Err(invalid(
                    "fixed_tau",
                    format!("need {} positive entries, got {t:?}", self.n_clients),
                ));
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                n,
                d,
                classes,
                separation,
                test_n,
            } => {
                if *classes < 2 || n < classes || *d == 0 || !(*separation > 0.0) || *test_n == 0 {
                    return Err(invalid(
                        "dataset",
                        "synthetic data needs n >= classes >= 2, d >= 1, separation > 0, test_n >= 1",
                    ));
                }
            }
            DatasetConfig::Idx { .. } => {}
        }
        Ok(())
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}
