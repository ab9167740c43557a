//! Log-density contract and Gaussian densities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// ln(2π)/2
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// An (unnormalized) log-density with gradient.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }

    /// Returns `log π̄(x)` and writes `∇ log π̄(x)` into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(x, grad)
    }
}

/// Multivariate normal `N(mean, cov)`, normalized.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

/// Serializable description of a Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    /// Per-variable standard deviations (independent variables).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f64>>,
    /// Full covariance, row-major rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl GaussianSpec {
    pub fn build(&self) -> Result<Gaussian> {
        let d = self.mean.len();
        match (&self.std, &self.cov) {
            (Some(std), None) => {
                check_dim(d, std.len())?;
                Gaussian::diagonal(self.mean.clone(), std)
            }
            (None, Some(cov)) => {
                check_dim(d, cov.len())?;
                let mut flat = Vec::with_capacity(d * d);
                for row in cov {
                    check_dim(d, row.len())?;
                    flat.extend_from_slice(row);
                }
                Gaussian::new(self.mean.clone(), DMatrix::from_row_slice(d, d, &flat))
            }
            _ => Err(Error::Config(
                "gaussian needs exactly one of `std` or `cov`".into(),
            )),
        }
    }
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Gaussian {
            mean: DVector::from_vec(mean),
            chol: l,
            precision,
            log_norm: -0.5 * log_det - d as f64 * HALF_LN_2PI,
        })
    }

    pub fn diagonal(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(
            std.len(),
            std.iter().map(|s| s * s),
        ));
        Self::new(mean, cov)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `mean + L ε`.
    pub fn transform(&self, eps: &[f64]) -> Vec<f64> {
        let e = DVector::from_column_slice(eps);
        (&self.mean + &self.chol * e).as_slice().to_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.mean.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.transform(&eps)
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let pr = &self.precision * &r;
        for (g, v) in grad.iter_mut().zip(pr.iter()) {
            *g = -v;
        }
        self.log_norm - 0.5 * r.dot(&pr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_values() {
        let g = Gaussian::diagonal(vec![2.0], &[0.5]).unwrap();
        // log(1 / (0.5 sqrt(2π)))
        assert!((g.log_density(&[2.0]) - (-0.2257913526447274)).abs() < 1e-12);
        let mut grad = [0.0];
        g.log_density_grad(&[3.0], &mut grad);
        assert!((grad[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Gaussian::new(vec![0.0, 0.0], cov),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(Gaussian::diagonal(vec![0.0], &[0.0]).is_err());
    }

    #[test]
    fn spec_variants() {
        let s = GaussianSpec {
            mean: vec![0.0, 1.0],
            std: None,
            cov: Some(vec![vec![2.0, 0.5], vec![0.5, 1.0]]),
        };
        let g = s.build().unwrap();
        assert!((g.cov()[(0, 1)] - 0.5).abs() < 1e-14);
        let bad = GaussianSpec {
            mean: vec![0.0],
            std: None,
            cov: None,
        };
        assert!(matches!(bad.build(), Err(Error::Config(_))));
    }
}
