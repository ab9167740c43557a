//! Forward models, nuisance and noise generators, analytic likelihoods and
//! joint-sample generation.

pub mod em31;
mod external;
mod geometry;
mod joint;

pub use em31::{analytic_gaussian_loglik, sigma_eff, sigma_eff_deriv, tilt_surrogate, Em31Config};
pub use external::{ExternalModel, BLACKBOX_PROTOCOL};
pub use geometry::InterfaceGeometry;
pub use joint::{
    generate_joint_samples, simulate_observations, EmpiricalProposal, JointSampleSet,
    ProposalSampler, SAMPLES_FORMAT, SAMPLES_FORMAT_VERSION,
};

use std::cell::Cell;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A black-box map `(θ, ξ, η, t) ↦ y_t`, deterministic given its inputs.
pub trait ForwardModel: Send + Sync {
    fn id(&self) -> String;
    fn n_theta(&self) -> usize;
    fn n_y(&self) -> usize;

    /// Nuisance inputs ξ for step `t`; empty when the model has none.
    fn draw_nuisance(&self, _t: usize, _rng: &mut dyn RngCore) -> Vec<f64> {
        Vec::new()
    }

    /// Noise inputs η for step `t`.
    fn draw_noise(&self, t: usize, rng: &mut dyn RngCore) -> Vec<f64>;

    fn evaluate(&self, theta: &[f64], nuisance: &[f64], noise: &[f64], t: usize) -> Result<Vec<f64>>;
}

thread_local! {
    static MODEL_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Forward-model evaluations made on this thread.
pub fn model_calls() -> u64 {
    MODEL_CALLS.with(Cell::get)
}

pub(crate) fn call_model(
    model: &dyn ForwardModel,
    theta: &[f64],
    nuisance: &[f64],
    noise: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    MODEL_CALLS.with(|c| c.set(c.get() + 1));
    let y = model.evaluate(theta, nuisance, noise, t)?;
    if y.len() != model.n_y() {
        return Err(Error::Model(format!(
            "model returned {} outputs, expected {}",
            y.len(),
            model.n_y()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("model returned non-finite output".into()));
    }
    Ok(y)
}

/// Tilt nuisance of the synthetic EM31 variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tilt {
    #[default]
    None,
    /// `α ~ U[0, max_deg]` degrees, `max_deg ≤ 5`.
    Uniform { max_deg: f64 },
}

/// EM31 reading over an interface `z(x)` sampled at one position per step:
/// `y_t = σ_eff(z(x_t)) cos²(α) + σ_ε η`.
///
/// With no modes, `θ = (thickness)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Em31Model {
    pub em31: Em31Config,
    pub geometry: InterfaceGeometry,
    /// Positions cycled by step; empty means `x = 0`.
    pub positions: Vec<f64>,
    pub tilt: Tilt,
}

impl Em31Model {
    pub fn thickness(em31: Em31Config) -> Self {
        Em31Model {
            em31,
            geometry: InterfaceGeometry {
                modes: 0,
                length: 1.0,
            },
            positions: Vec::new(),
            tilt: Tilt::None,
        }
    }

    pub fn position(&self, t: usize) -> f64 {
        if self.positions.is_empty() {
            0.0
        } else {
            self.positions[(t.max(1) - 1) % self.positions.len()]
        }
    }

    /// Noise-free response at step `t` for tilt `α` (degrees).
    pub fn response(&self, theta: &[f64], alpha: f64, t: usize) -> Result<f64> {
        let z = self.geometry.height(theta, self.position(t))?;
        tilt_surrogate(z, alpha, &self.em31)
    }

    /// Noise-free response and its θ-gradient (no tilt).
    pub fn response_grad(&self, theta: &[f64], t: usize) -> Result<(f64, Vec<f64>)> {
        let x = self.position(t);
        let z = self.geometry.height(theta, x)?;
        let d = sigma_eff_deriv(z, &self.em31)?;
        let g = self.geometry.height_grad(x)?.into_iter().map(|v| v * d).collect();
        Ok((sigma_eff(z, &self.em31)?, g))
    }

    pub fn validate(&self) -> Result<()> {
        self.em31.validate()?;
        if let Tilt::Uniform { max_deg } = self.tilt {
            if !(0.0..=5.0).contains(&max_deg) {
                return Err(Error::Config("tilt max_deg must lie in [0, 5]".into()));
            }
        }
        for &x in &self.positions {
            if !(0.0..=self.geometry.length).contains(&x) {
                return Err(Error::Config(format!("position {x} outside the domain")));
            }
        }
        Ok(())
    }
}

impl ForwardModel for Em31Model {
    fn id(&self) -> String {
        match self.tilt {
            Tilt::None => "em31".into(),
            Tilt::Uniform { .. } => "em31-tilt".into(),
        }
    }

    fn n_theta(&self) -> usize {
        self.geometry.n_coeffs()
    }

    fn n_y(&self) -> usize {
        1
    }

    fn draw_nuisance(&self, _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        match self.tilt {
            Tilt::None => Vec::new(),
            Tilt::Uniform { max_deg } => vec![rng.random_range(0.0..=max_deg)],
        }
    }

    fn draw_noise(&self, _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.sample(StandardNormal)]
    }

    fn evaluate(&self, theta: &[f64], nuisance: &[f64], noise: &[f64], t: usize) -> Result<Vec<f64>> {
        let alpha = nuisance.first().copied().unwrap_or(0.0);
        let s = self.response(theta, alpha, t)?;
        Ok(vec![s + self.em31.sigma_eps * noise[0]])
    }
}

/// `y = θ + σ η` in `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianModel {
    pub dim: usize,
    pub noise_std: f64,
}

impl ForwardModel for LinearGaussianModel {
    fn id(&self) -> String {
        "linear-gaussian".into()
    }

    fn n_theta(&self) -> usize {
        self.dim
    }

    fn n_y(&self) -> usize {
        self.dim
    }

    fn draw_noise(&self, _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn evaluate(&self, theta: &[f64], _nuisance: &[f64], noise: &[f64], _t: usize) -> Result<Vec<f64>> {
        Ok(theta
            .iter()
            .zip(noise)
            .map(|(t, e)| t + self.noise_std * e)
            .collect())
    }
}

/// Serializable model selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Em31 {
        #[serde(default)]
        em31: Em31Config,
        #[serde(default)]
        modes: usize,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default)]
        positions: Vec<f64>,
        #[serde(default)]
        tilt: Tilt,
    },
    LinearGaussian {
        dim: usize,
        noise_std: f64,
    },
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        n_theta: usize,
        n_y: usize,
        noise_std: f64,
    },
}

fn default_length() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn ForwardModel>> {
        match self {
            ModelSpec::Em31 {
                em31,
                modes,
                length,
                positions,
                tilt,
            } => {
                let m = Em31Model {
                    em31: *em31,
                    geometry: InterfaceGeometry::new(*modes, *length)?,
                    positions: positions.clone(),
                    tilt: *tilt,
                };
                m.validate()?;
                Ok(Box::new(m))
            }
            ModelSpec::LinearGaussian { dim, noise_std } => {
                if *dim == 0 || !(*noise_std >= 0.0) {
                    return Err(Error::Config("linear-gaussian: bad dim or noise".into()));
                }
                Ok(Box::new(LinearGaussianModel {
                    dim: *dim,
                    noise_std: *noise_std,
                }))
            }
            ModelSpec::External {
                command,
                args,
                n_theta,
                n_y,
                noise_std,
            } => Ok(Box::new(ExternalModel::new(
                command.into(),
                args.clone(),
                *n_theta,
                *n_y,
                *noise_std,
            )?)),
        }
    }

    /// Standard deviation of the additive Gaussian noise when the model
    /// has no nuisance and positive noise.
    pub fn additive_noise_std(&self) -> Option<f64> {
        let s = match self {
            ModelSpec::Em31 { em31, tilt, .. } => match tilt {
                Tilt::None => em31.sigma_eps,
                Tilt::Uniform { .. } => return None,
            },
            ModelSpec::LinearGaussian { noise_std, .. } => *noise_std,
            ModelSpec::External { noise_std, .. } => *noise_std,
        };
        (s > 0.0).then_some(s)
    }

    /// The exact likelihood, for models with additive Gaussian noise.
    pub fn gaussian_likelihood(&self) -> Result<Option<AdditiveGaussianLikelihood>> {
        let Some(noise_std) = self.additive_noise_std() else {
            return Ok(None);
        };
        Ok(Some(AdditiveGaussianLikelihood {
            model: self.build()?,
            noise_std,
        }))
    }

    /// Same model with any nuisance switched off.
    pub fn without_nuisance(&self) -> Self {
        let mut s = self.clone();
        if let ModelSpec::Em31 { tilt, .. } = &mut s {
            *tilt = Tilt::None;
        }
        s
    }
}

/// Exact likelihood of a model with additive Gaussian noise,
/// `y = m_t(θ) + σ η`, with `m_t` the noise-free model output.
///
/// Every evaluation calls the forward model once.
pub struct AdditiveGaussianLikelihood {
    model: Box<dyn ForwardModel>,
    noise_std: f64,
}

impl AdditiveGaussianLikelihood {
    pub fn n_theta(&self) -> usize {
        self.model.n_theta()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Noise-free output `m_t(θ)`.
    pub fn mean(&self, theta: &[f64], t: usize) -> Result<Vec<f64>> {
        let zeros = vec![0.0; self.model.n_y()];
        call_model(self.model.as_ref(), theta, &[], &zeros, t)
    }

    /// Normalized `log π(y_t | θ)`.
    pub fn loglik(&self, theta: &[f64], y: &[f64], t: usize) -> Result<f64> {
        let m = self.mean(theta, t)?;
        crate::error::check_dim(m.len(), y.len())?;
        let s = self.noise_std;
        let norm = s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
        Ok(m.iter()
            .zip(y)
            .map(|(mi, yi)| {
                let r = (yi - mi) / s;
                -0.5 * r * r - norm
            })
            .sum())
    }
}

/// `log π(y|θ)` for `y = H(θ) ε`: `-ln|H| + log π_ε(y/H)`.
pub fn multiplicative_loglik(y: f64, h: f64, log_noise: impl Fn(f64) -> f64) -> f64 {
    -h.abs().ln() + log_noise(y / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn additive_likelihood_matches_em31_formula() {
        let spec = ModelSpec::Em31 {
            em31: Em31Config::default(),
            modes: 0,
            length: 1.0,
            positions: vec![],
            tilt: Tilt::None,
        };
        let lik = spec.gaussian_likelihood().unwrap().unwrap();
        let cfg = Em31Config::default();
        let before = model_calls();
        for (th, y) in [(2.0, 600.0), (1.3, 800.0)] {
            let (v, _) = analytic_gaussian_loglik(y, th, &cfg).unwrap();
            let norm = 63f64.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
            let got = lik.loglik(&[th], &[y], 1).unwrap();
            assert!((got - (v - norm)).abs() < 1e-12);
        }
        assert_eq!(model_calls() - before, 2);
        let tilted = ModelSpec::Em31 {
            em31: cfg,
            modes: 0,
            length: 1.0,
            positions: vec![],
            tilt: Tilt::Uniform { max_deg: 5.0 },
        };
        assert!(tilted.gaussian_likelihood().unwrap().is_none());
    }

    #[test]
    fn multiplicative_matches_histogram() {
        // ε ~ N(1, 0.2²), H = 2.5
        let h = 2.5;
        let log_noise = |e: f64| {
            let r = (e - 1.0) / 0.2;
            -0.5 * r * r - (0.2 * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4_000_000;
        let (lo, hi, bins) = (0.5, 4.5, 40);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let e: f64 = 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal);
            let y = h * e;
            if y >= lo && y < hi {
                counts[((y - lo) / width) as usize] += 1;
            }
        }
        // bin averages by Simpson's rule
        let dens: Vec<f64> = (0..bins)
            .map(|b| {
                let a = lo + b as f64 * width;
                let f = |y: f64| multiplicative_loglik(y, h, log_noise).exp();
                (f(a) + 4.0 * f(a + 0.5 * width) + f(a + width)) / 6.0
            })
            .collect();
        let peak = dens.iter().cloned().fold(0.0, f64::max);
        for b in 0..bins {
            if dens[b] > 0.01 * peak {
                let emp = counts[b] as f64 / (n as f64 * width);
                assert!((emp - dens[b]).abs() / dens[b] < 0.05, "bin {b}: {emp} {}", dens[b]);
            }
        }
    }

    #[test]
    fn em31_model_response() {
        let m = Em31Model::thickness(Em31Config::default());
        let y = m.evaluate(&[2.0], &[], &[0.0], 1).unwrap();
        assert_eq!(y[0], sigma_eff(2.0, &m.em31).unwrap());
        let (v, g) = m.response_grad(&[2.0], 1).unwrap();
        assert_eq!(v, y[0]);
        assert!((g[0] - sigma_eff_deriv(2.0, &m.em31).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spec_parsing() {
        let s: ModelSpec = toml::from_str("kind = \"linear-gaussian\"\ndim = 1\nnoise_std = 1.0").unwrap();
        assert!(s.build().is_ok());
        let e: ModelSpec = toml::from_str("kind = \"em31\"\ntilt = { kind = \"uniform\", max_deg = 5.0 }").unwrap();
        assert_eq!(e.build().unwrap().id(), "em31-tilt");
        assert!(toml::from_str::<ModelSpec>("kind = \"nope\"").is_err());
    }
}
