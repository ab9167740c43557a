//! Run configuration shared by every CLI command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::{Gaussian, GaussianSpec};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::sbi::AssimilationConfig;
use crate::training::AtmConfig;

/// Name of the resolved configuration written into the output directory.
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub prior: GaussianSpec,
    #[serde(default)]
    pub proposal: ProposalSpec,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub offline: OfflineConfig,
    #[serde(default)]
    pub online: AssimilationConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

/// Parameter distribution of the joint samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProposalSpec {
    #[default]
    Prior,
    /// Parameter rows from a CSV file (for instance earlier posterior samples).
    Samples { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Reference parameter; the prior mean when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_ref: Option<Vec<f64>>,
    pub steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            theta_ref: None,
            steps: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    /// Joint samples per step.
    pub n_samples: usize,
    /// Parallel workers across steps (the command line and `TMSBI_WORKERS` override it).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub atm: AtmConfig,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            n_samples: 20_000,
            workers: None,
            // held-out gains below 1e-3 nats are sampling noise at 2·10⁴ rows
            atm: AtmConfig {
                min_improvement: 1e-3,
                ..AtmConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodChoice {
    /// Exact likelihood when the model has additive Gaussian noise, else the surrogates.
    #[default]
    Auto,
    Analytic,
    Surrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n: usize,
    /// Steps to sample; the last observation step when empty.
    pub steps: Vec<usize>,
    /// Fraction of the chain discarded as burn-in.
    pub burn_in: f64,
    pub likelihood: LikelihoodChoice,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n: 100_000,
            steps: Vec::new(),
            burn_in: 0.1,
            likelihood: LikelihoodChoice::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Surrogate step examined.
    pub step: usize,
    /// Parameter range; prior mean ± 4 prior std when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_range: Option<[f64; 2]>,
    pub n_theta: usize,
    pub n_y: usize,
    /// Half-width of the data range in noise standard deviations.
    pub y_half_width: f64,
    /// Test samples for the posterior map diagnostics.
    pub n_test: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            step: 1,
            theta_range: None,
            n_theta: 41,
            n_y: 41,
            y_half_width: 2.0,
            n_test: 10_000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration into the output directory.
    pub fn write_copy(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir)?;
        fs::write(self.output_dir.join(CONFIG_COPY), self.to_toml()?)?;
        Ok(())
    }

    pub fn prior(&self) -> Result<Gaussian> {
        self.prior.build().map_err(|e| Error::Config(format!("prior: {e}")))
    }

    pub fn theta_ref(&self) -> Vec<f64> {
        self.simulate
            .theta_ref
            .clone()
            .unwrap_or_else(|| self.prior.mean.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        let prior = self.prior()?;
        let d = model.n_theta();
        if prior.mean().len() != d {
            return Err(Error::Config(format!(
                "prior has dimension {}, the model has {d} parameters",
                prior.mean().len()
            )));
        }
        if self.theta_ref().len() != d {
            return Err(Error::Config("simulate.theta_ref has the wrong dimension".into()));
        }
        if self.offline.n_samples == 0 || self.offline.workers == Some(0) {
            return Err(Error::Config("offline: n_samples and workers must be positive".into()));
        }
        self.offline.atm.validate()?;
        self.online.validate()?;
        if self.mcmc.n == 0 || !(0.0..1.0).contains(&self.mcmc.burn_in) {
            return Err(Error::Config("mcmc: need n > 0 and burn_in in [0, 1)".into()));
        }
        let g = &self.diagnose;
        if g.step == 0 || g.n_theta < 2 || g.n_y < 2 || !(g.y_half_width > 0.0) || g.n_test < 100 {
            return Err(Error::Config("diagnose: bad grid or test size".into()));
        }
        if let Some([lo, hi]) = g.theta_range {
            if !(hi > lo) {
                return Err(Error::Config("diagnose: empty theta_range".into()));
            }
        }
        Ok(())
    }
}
