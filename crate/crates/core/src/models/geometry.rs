//! Ice/water interface geometry as a modal expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `z(x) = θ_0 + Σ_{k=1}^m θ_k Ψ_k(x)` on `[0, length]` with sine modes
/// `Ψ_k(x) = sin(kπx/length)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceGeometry {
    pub modes: usize,
    pub length: f64,
}

impl InterfaceGeometry {
    pub fn new(modes: usize, length: f64) -> Result<Self> {
        if !(length > 0.0) {
            return Err(Error::Config("geometry: length must be positive".into()));
        }
        Ok(InterfaceGeometry { modes, length })
    }

    pub fn n_coeffs(&self) -> usize {
        self.modes + 1
    }

    /// `Ψ_k(x)` for `k = 1..=modes`.
    pub fn mode(&self, k: usize, x: f64) -> f64 {
        (k as f64 * std::f64::consts::PI * x / self.length).sin()
    }

    fn check(&self, theta: &[f64], x: f64) -> Result<()> {
        if theta.len() != self.n_coeffs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_coeffs(),
                got: theta.len(),
            });
        }
        if !(0.0..=self.length).contains(&x) {
            return Err(Error::Model(format!(
                "position {x} outside [0, {}]",
                self.length
            )));
        }
        Ok(())
    }

    pub fn height(&self, theta: &[f64], x: f64) -> Result<f64> {
        self.check(theta, x)?;
        Ok(theta[0]
            + (1..=self.modes)
                .map(|k| theta[k] * self.mode(k, x))
                .sum::<f64>())
    }

    /// `∂z/∂θ_k`, which does not depend on θ.
    pub fn height_grad(&self, x: f64) -> Result<Vec<f64>> {
        self.check(&vec![0.0; self.n_coeffs()], x)?;
        Ok(std::iter::once(1.0)
            .chain((1..=self.modes).map(|k| self.mode(k, x)))
            .collect())
    }
}
