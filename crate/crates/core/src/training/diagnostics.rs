//! Variance and trace diagnostics of a pulled-back target.

use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{Error, Result};
use crate::transport::{ComposedMap, ReferenceDensity, TriangularMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `ε̂_σ`
    pub variance: f64,
    /// `ε̂_trace`
    pub trace: f64,
    pub n_test: usize,
}

impl DiagnosticsReport {
    pub fn within(&self, tol_variance: f64, tol_trace: f64) -> bool {
        self.variance < tol_variance && self.trace < tol_trace
    }
}

/// Diagnostics from a log pullback `x ↦ (log T^♯π̄(x), ∇ log T^♯π̄(x))`
/// evaluated at reference test samples.
///
/// The variance diagnostic is half the empirical variance of
/// `log T^♯π̄ - log ρ`; the trace diagnostic is `(1/2n) Σ |∇(log T^♯π̄ - log ρ)|²`.
pub fn diagnostics<F>(test: &[Vec<f64>], mut log_pullback: F) -> Result<DiagnosticsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = test.len();
    if n < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n });
    }
    let reference = ReferenceDensity::new(test[0].len());
    let mut ratios = Vec::with_capacity(n);
    let mut trace = 0.0;
    for (i, x) in test.iter().enumerate() {
        let (v, g) = log_pullback(x)?;
        let r = v - reference.log_density(x);
        // ∇ log ρ(x) = -x
        let sq: f64 = g.iter().zip(x).map(|(gi, xi)| (gi + xi) * (gi + xi)).sum();
        if !r.is_finite() || !sq.is_finite() {
            return Err(Error::NonFiniteDiagnostic { index: i });
        }
        ratios.push(r);
        trace += sq;
    }
    // two-pass variance; the constant offset of an unnormalized target cancels
    let mean = ratios.iter().sum::<f64>() / n as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(DiagnosticsReport {
        variance: 0.5 * var,
        trace: trace / (2.0 * n as f64),
        n_test: n,
    })
}

/// Diagnostics of a full forward map against a target.
pub fn map_diagnostics(
    map: &TriangularMap,
    target: &dyn LogDensity,
    test: &[Vec<f64>],
) -> Result<DiagnosticsReport> {
    diagnostics(test, |x| {
        let (_, v, g) = map.pullback_target(x, target, true)?;
        Ok((v, g.expect("gradient requested")))
    })
}

/// Diagnostics of a composed forward map against a target.
pub fn composed_diagnostics(
    map: &ComposedMap,
    target: &dyn LogDensity,
    test: &[Vec<f64>],
) -> Result<DiagnosticsReport> {
    diagnostics(test, |x| {
        let (_, v, g) = map.pullback_target(x, target, true)?;
        Ok((v, g.expect("gradient requested")))
    })
}
