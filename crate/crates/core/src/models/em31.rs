//! Planar two-layer EM31 response and its Gaussian likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conductivities in mS/m.
///
/// The defaults for `sigma_i` and `sigma_w` are not measured values: they
/// are chosen so that `σ_eff(2) ≈ 630` and a noise level of 63 is ten
/// percent of the signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Em31Config {
    pub sigma_i: f64,
    pub sigma_w: f64,
    pub sigma_eps: f64,
}

impl Default for Em31Config {
    fn default() -> Self {
        Em31Config {
            sigma_i: 20.0,
            sigma_w: 2400.0,
            sigma_eps: 63.0,
        }
    }
}

impl Em31Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_i >= 0.0 && self.sigma_w > self.sigma_i) {
            return Err(Error::Config("em31: need sigma_w > sigma_i >= 0".into()));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::Config("em31: sigma_eps must be positive".into()));
        }
        Ok(())
    }
}

fn check_thickness(theta: f64) -> Result<()> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Model(format!("negative or non-finite thickness {theta}")))
    }
}

/// `σ_I (1 - R) + σ_W R` with `R(θ) = 1/√(4θ² + 1)`.
pub fn sigma_eff(theta: f64, cfg: &Em31Config) -> Result<f64> {
    check_thickness(theta)?;
    let r = 1.0 / (4.0 * theta * theta + 1.0).sqrt();
    Ok(cfg.sigma_i * (1.0 - r) + cfg.sigma_w * r)
}

/// `dσ_eff/dθ`.
pub fn sigma_eff_deriv(theta: f64, cfg: &Em31Config) -> Result<f64> {
    check_thickness(theta)?;
    let q = 4.0 * theta * theta + 1.0;
    // dR/dθ = -4θ q^{-3/2}
    let dr = -4.0 * theta / (q * q.sqrt());
    Ok((cfg.sigma_w - cfg.sigma_i) * dr)
}

/// `-½((y - σ_eff(θ))/σ_ε)²` and its θ-derivative (unnormalized).
pub fn analytic_gaussian_loglik(y: f64, theta: f64, cfg: &Em31Config) -> Result<(f64, f64)> {
    let r = (y - sigma_eff(theta, cfg)?) / cfg.sigma_eps;
    let d = r / cfg.sigma_eps * sigma_eff_deriv(theta, cfg)?;
    Ok((-0.5 * r * r, d))
}

/// Synthetic tilt response `σ_eff(θ) cos²(α)` with `α` in degrees, `α ∈ [0, 5]`.
///
/// Stands in for the tilted-device physics; it only mimics a smooth,
/// parameter-coupled attenuation.
pub fn tilt_surrogate(theta: f64, alpha_deg: f64, cfg: &Em31Config) -> Result<f64> {
    if !(0.0..=5.0).contains(&alpha_deg) {
        return Err(Error::Model(format!("tilt angle {alpha_deg} outside [0, 5] degrees")));
    }
    let c = alpha_deg.to_radians().cos();
    Ok(sigma_eff(theta, cfg)? * c * c)
}
