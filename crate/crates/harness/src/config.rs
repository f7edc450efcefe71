//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use excursion_core::pivotal::{PivotalConfig, QuasiConfig};
use excursion_core::stats::VolumeConfig;
use excursion_core::topology::{check_scales, FunctionalSpec};
use excursion_core::{CovarianceModel, ModelDescriptor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Sample,
    Functional,
    Lln,
    Var,
    Clt,
    Asclt,
    QcltRate,
    Arm,
    Sigma2,
    Volume,
    Quasi,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Sample => "sample",
            Suite::Functional => "functional",
            Suite::Lln => "lln",
            Suite::Var => "var",
            Suite::Clt => "clt",
            Suite::Asclt => "asclt",
            Suite::QcltRate => "qclt-rate",
            Suite::Arm => "arm",
            Suite::Sigma2 => "sigma2",
            Suite::Volume => "volume",
            Suite::Quasi => "quasi",
        }
    }
}

/// Mesobox scales `(r, a)` paired with every `R` in `scales`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MesoScales {
    pub r: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscltSettings {
    pub r_max: f64,
    #[serde(default = "default_calibration")]
    pub calibration: usize,
    /// Independent master seeds, derived from the run seed.
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub maps: Vec<excursion_core::pivotal::LipschitzMap>,
}

fn default_calibration() -> usize {
    100
}

fn default_runs() -> usize {
    10
}

fn default_replicates() -> usize {
    100
}

fn default_spacing() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub suite: Option<Suite>,
    pub model: ModelDescriptor,
    #[serde(default)]
    pub functional: Option<FunctionalSpec>,
    /// Box sides `R` (field units), increasing.
    #[serde(default)]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub mesoscales: Option<MesoScales>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub buffer: f64,
    /// Level for the arm suite; defaults to the functional's level.
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default)]
    pub pivotal: Option<PivotalConfig>,
    #[serde(default)]
    pub volume: Option<VolumeConfig>,
    #[serde(default)]
    pub quasi: Option<QuasiConfig>,
    #[serde(default)]
    pub asclt: Option<AscltSettings>,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::ConfigInvalid(msg.into()))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
    }

    pub fn suite(&self) -> Result<Suite> {
        self.suite.ok_or_else(|| HarnessError::ConfigInvalid("no suite named".into()))
    }

    pub fn covariance_model(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_descriptor(&self.model).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
    }

    pub fn functional_spec(&self) -> Result<FunctionalSpec> {
        self.functional.clone().ok_or_else(|| HarnessError::ConfigInvalid("suite needs a functional".into()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks every constraint before any sampling happens.
    pub fn validate(&self) -> Result<()> {
        let suite = self.suite()?;
        let model = self.covariance_model()?;
        if !(self.spacing > 0.0) || !(self.buffer >= 0.0) {
            return invalid("spacing must be positive and buffer non-negative");
        }
        if self.scales.iter().any(|&r| !(r > 0.0)) || self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("scales must be positive and increasing");
        }
        if let Some(m) = self.mesoscales {
            for &big in &self.scales {
                check_scales(big, m.r, m.a).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            }
        }
        if let Some(f) = &self.functional {
            f.validate(model.dim()).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        }
        let needs_scales = matches!(
            suite,
            Suite::Sample | Suite::Functional | Suite::Lln | Suite::Var | Suite::Clt | Suite::QcltRate | Suite::Arm
        );
        if needs_scales && self.scales.is_empty() {
            return invalid(format!("suite {} needs at least one scale", suite.name()));
        }
        let needs_functional = matches!(
            suite,
            Suite::Functional | Suite::Lln | Suite::Var | Suite::Clt | Suite::QcltRate | Suite::Asclt
        );
        if needs_functional {
            self.functional_spec()?;
        }
        match suite {
            Suite::Var if self.replicates < 100 => return invalid("variance curves need replicates >= 100"),
            Suite::Clt | Suite::QcltRate if self.replicates < 1000 => {
                return invalid("CLT checks need replicates >= 1000")
            }
            Suite::Sigma2 => {
                let p = self.pivotal.as_ref().ok_or_else(|| HarnessError::ConfigInvalid("sigma2 needs pivotal".into()))?;
                p.validate(&model).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            }
            Suite::Var => {
                if let Some(p) = &self.pivotal {
                    p.validate(&model).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
                }
            }
            Suite::Volume => {
                let v = self.volume.as_ref().ok_or_else(|| HarnessError::ConfigInvalid("volume needs volume".into()))?;
                v.validate(&model).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            }
            Suite::Quasi => {
                let q = self.quasi.as_ref().ok_or_else(|| HarnessError::ConfigInvalid("quasi needs quasi".into()))?;
                if q.separations.is_empty() || q.replicates < 2 {
                    return invalid("quasi needs separations and replicates >= 2");
                }
            }
            Suite::Asclt => {
                if self.asclt.is_none() {
                    return invalid("asclt needs asclt settings");
                }
            }
            Suite::Arm => {
                if self.level.or(self.functional.as_ref().map(|f| f.level)).is_none() {
                    return invalid("arm needs a level");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base() -> ExperimentConfig {
        serde_json::from_str(
            r#"{"suite":"clt","model":{"family":"BargmannFock","d":2},
                "functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
                "scales":[16.0],"mesoscales":{"r":4.0,"a":1.0},"replicates":1000}"#,
        )
        .unwrap()
    }

    #[test]
    fn accepts_conforming_scales() {
        base().validate().unwrap();
    }

    #[test]
    fn names_violated_constraint() {
        let mut c = base();
        c.scales = vec![12.0];
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("R/(r+4a)") && msg.contains("not even"), "{msg}");
        let mut c = base();
        c.mesoscales = Some(MesoScales { r: 3.0, a: 1.0 });
        assert!(c.validate().unwrap_err().to_string().contains("r/a"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(base().hash(), base().hash());
        let mut c = base();
        c.seed = 1;
        assert_ne!(c.hash(), base().hash());
    }
}
