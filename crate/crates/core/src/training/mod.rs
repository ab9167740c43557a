//! Variational objectives, adaptive transport map (ATM) training and
//! accuracy diagnostics.

mod atm;
mod diagnostics;
pub mod objective;

pub(crate) use atm::reference_samples;
pub use atm::{
    candidate_gradients, fit_from_density, fit_from_density_with, fit_from_samples, fit_regression, DensityFit,
    RegressionFit, SampleFit,
};
pub use diagnostics::{composed_diagnostics, diagnostics, map_diagnostics, DiagnosticsReport};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexset::OrderCaps;
use crate::optim::MinimizeOptions;
use crate::polybasis::BasisFamily;

/// Settings for ATM training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtmConfig {
    /// Term budget per component (from samples, regression) or per map (from density).
    pub max_terms: usize,
    pub caps: OrderCaps,
    pub family: BasisFamily,
    pub quad_order: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Held-out fraction for validation (from samples, regression).
    pub validation_fraction: f64,
    /// Minimal held-out improvement that counts as progress.
    pub min_improvement: f64,
    /// Consecutive non-improving additions before stopping.
    pub patience: usize,
    pub tol_variance: f64,
    pub tol_trace: f64,
    /// Held-out mean-squared residual threshold for regression.
    pub regression_tol: f64,
    pub n_reference: usize,
    pub n_test: usize,
}

impl Default for AtmConfig {
    fn default() -> Self {
        AtmConfig {
            max_terms: 30,
            caps: OrderCaps::default(),
            family: BasisFamily::default(),
            quad_order: 32,
            max_iter: 500,
            grad_tol: 1e-6,
            validation_fraction: 0.2,
            min_improvement: 1e-4,
            patience: 2,
            tol_variance: 1e-3,
            tol_trace: 10f64.powf(-2.5),
            regression_tol: 1e-6,
            n_reference: 5000,
            n_test: 5000,
        }
    }
}

impl AtmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("atm: {what} must be positive")));
        if self.max_terms < 2 {
            return Err(Error::Config("atm: max_terms must be at least 2".into()));
        }
        if self.caps.max_per_variable == 0 || self.caps.max_total == 0 {
            return bad("order caps");
        }
        if self.caps.max_per_variable > self.family.max_order {
            return Err(Error::Config(
                "atm: per-variable cap exceeds the basis max_order".into(),
            ));
        }
        if self.quad_order == 0 {
            return bad("quad_order");
        }
        if self.max_iter == 0 {
            return bad("max_iter");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(
                "atm: validation_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.min_improvement >= 0.0) || self.patience == 0 {
            return bad("patience");
        }
        if !(self.tol_variance > 0.0 && self.tol_trace > 0.0 && self.regression_tol > 0.0) {
            return bad("tolerances");
        }
        if self.n_reference < 10 || self.n_test < 100 {
            return Err(Error::Config(
                "atm: need n_reference >= 10 and n_test >= 100".into(),
            ));
        }
        BasisFamily::new(self.family.max_order, self.family.tail_bound)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
        }
    }
}

/// One row of the adaptation trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub component: usize,
    pub iteration: usize,
    /// Index added before this iteration's optimization (empty for the start).
    pub selected: String,
    pub n_terms: usize,
    pub train_objective: f64,
    pub validation: Option<f64>,
    pub variance_diag: Option<f64>,
    pub trace_diag: Option<f64>,
    pub basis_evals: u64,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
