use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{check_dim, Error, Result};
use crate::models::JointSampleSet;
use crate::training::{fit_from_samples, AtmConfig, TraceRow};
use crate::transport::{Direction, MapFile, TriangularMap};

/// Likelihood `π(y_t | θ)` carried by the lower block of a joint
/// triangular map on `(θ, y_t)`.
#[derive(Clone, Debug)]
pub struct SurrogateLikelihood {
    step: usize,
    block: TriangularMap,
}

#[derive(Serialize, Deserialize)]
struct SurrogateFile {
    step: usize,
    map: MapFile,
}

/// A trained surrogate with its ATM trace.
#[derive(Clone, Debug)]
pub struct SurrogateFit {
    pub surrogate: SurrogateLikelihood,
    pub trace: Vec<TraceRow>,
    pub basis_evals: u64,
}

/// Trains the y-block of a joint map on `(θ, y)` rows ordered θ first.
///
/// Only the components of the y variables are trained: the θ-block of the
/// joint map never enters the conditional `π(y | θ)`.
pub fn build_surrogate(joint: &JointSampleSet, cfg: &AtmConfig, seed: u64) -> Result<SurrogateFit> {
    let rows = joint.joint_rows();
    let (fit, basis_evals) = cost::measure(|| fit_from_samples(&rows, joint.n_theta(), cfg, seed));
    let fit = fit?;
    Ok(SurrogateFit {
        surrogate: SurrogateLikelihood::new(joint.step, fit.map)?,
        trace: fit.trace,
        basis_evals,
    })
}

impl SurrogateLikelihood {
    /// Wraps a pullback block map whose offset is the parameter dimension.
    pub fn new(step: usize, block: TriangularMap) -> Result<Self> {
        if block.offset() == 0 || block.direction() != Direction::Pullback {
            return Err(Error::invalid(
                "a surrogate needs a pullback block map with a parameter prefix",
            ));
        }
        Ok(SurrogateLikelihood { step, block })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn n_theta(&self) -> usize {
        self.block.offset()
    }

    pub fn n_y(&self) -> usize {
        self.block.n_outputs()
    }

    pub fn block(&self) -> &TriangularMap {
        &self.block
    }

    fn joint(&self, theta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_theta(), theta.len())?;
        check_dim(self.n_y(), y.len())?;
        Ok(theta.iter().chain(y).copied().collect())
    }

    /// `log S(θ, ·)^♯ρ(y)`.
    pub fn loglik(&self, theta: &[f64], y: &[f64]) -> Result<f64> {
        self.block.log_pullback(&self.joint(theta, y)?)
    }

    /// Log-likelihood and its gradient in `θ`.
    pub fn loglik_grad(&self, theta: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = self.block.log_pullback_grad(&self.joint(theta, y)?)?;
        g.truncate(self.n_theta());
        Ok((v, g))
    }

    pub fn grad_loglik(&self, theta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loglik_grad(theta, y)?.1)
    }

    /// Draws `y | θ` from reference values `z` through the inverse block.
    pub fn sample_y(&self, theta: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_theta(), theta.len())?;
        self.block.inverse_block(theta, z)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SurrogateFile {
            step: self.step,
            map: MapFile::from_map(&self.block),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SurrogateFile = serde_json::from_str(text)?;
        Self::new(f.step, f.map.to_map()?)
    }
}
