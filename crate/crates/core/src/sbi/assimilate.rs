use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost;
use crate::density::{Gaussian, LogDensity};
use crate::error::{check_dim, Error, Result};
use crate::seeds::{self, purpose};
use crate::stats::{marginals, Marginal};
use crate::training::{
    composed_diagnostics, fit_from_density, fit_from_density_with, fit_regression, reference_samples, AtmConfig,
    DiagnosticsReport,
};
use crate::transport::{ComposedMap, TriangularMap};

use super::registry::Registry;
use super::surrogate::SurrogateLikelihood;

/// Settings of the online phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssimilationConfig {
    /// ATM settings for intermediate maps (their tolerances stop the fit).
    pub intermediate: AtmConfig,
    /// ATM settings for direct maps (first step and recovery).
    pub recovery: AtmConfig,
    /// ATM settings for compression by regression.
    pub compression: AtmConfig,
    /// Recovery is triggered when the previous step's diagnostics reach
    /// these tolerances.
    pub tol_variance: f64,
    pub tol_trace: f64,
    pub l_max: usize,
    pub compress: bool,
    pub recover: bool,
    /// Reference points used for compression.
    pub n_compression: usize,
    /// Test points for the running-posterior diagnostics.
    pub n_diagnostic: usize,
    /// Evaluate only this many randomly chosen likelihood terms (rescaled)
    /// in the running-posterior diagnostics.
    pub diag_subsample: Option<usize>,
    /// Samples used for the per-step marginal summaries.
    pub n_summary: usize,
}

impl Default for AssimilationConfig {
    fn default() -> Self {
        let atm = AtmConfig::default();
        // Errors of intermediate maps compound through the composition, so
        // they are held a decade below the recovery tolerances.
        let intermediate = AtmConfig {
            tol_variance: atm.tol_variance / 10.0,
            tol_trace: atm.tol_trace / 10.0,
            ..atm.clone()
        };
        AssimilationConfig {
            tol_variance: atm.tol_variance,
            tol_trace: atm.tol_trace,
            intermediate,
            recovery: atm.clone(),
            compression: atm,
            l_max: 5,
            compress: true,
            recover: true,
            n_compression: 1000,
            n_diagnostic: 2000,
            diag_subsample: None,
            n_summary: 5000,
        }
    }
}

impl AssimilationConfig {
    pub fn validate(&self) -> Result<()> {
        self.intermediate.validate()?;
        self.recovery.validate()?;
        self.compression.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.tol_variance > 0.0 && self.tol_trace > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.l_max == 0 {
            return bad("l_max must be at least 1");
        }
        if self.n_compression < 10 || self.n_diagnostic < 2 || self.n_summary < 2 {
            return bad("n_compression ≥ 10, n_diagnostic ≥ 2 and n_summary ≥ 2 are required");
        }
        if self.diag_subsample == Some(0) {
            return bad("diag_subsample must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Direct map to the first posterior.
    Initial,
    Intermediate,
    Recovery,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Initial => "initial",
            Branch::Intermediate => "intermediate",
            Branch::Recovery => "recovery",
        }
    }
}

/// Log of one assimilation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub branch: Branch,
    /// Terms and total order of the map trained at this step.
    pub n_terms: usize,
    pub order: usize,
    pub fit_converged: bool,
    pub compressed: bool,
    /// Compression ran but missed its residual threshold.
    pub compression_failed: bool,
    /// Held-out residual of the compression relative to the output variance.
    pub compression_mse: Option<f64>,
    pub composition_length: usize,
    pub diagnostics: DiagnosticsReport,
    /// The running-posterior diagnostics could not be computed.
    pub diagnostics_failed: bool,
    pub cost_training: u64,
    pub cost_compression: u64,
    pub cost_diagnostics: u64,
    pub marginals: Vec<Marginal>,
}

impl StepRecord {
    /// Basis evaluations spent on characterizing the posterior map
    /// (training and compression; monitoring excluded).
    pub fn cost(&self) -> u64 {
        self.cost_training + self.cost_compression
    }
}

/// `log π(θ) + w Σ_k log π(y_k | θ)` over registered surrogates.
pub struct PosteriorTarget<'a> {
    prior: &'a Gaussian,
    terms: Vec<(&'a SurrogateLikelihood, &'a [f64])>,
    weight: f64,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(prior: &'a Gaussian, terms: Vec<(&'a SurrogateLikelihood, &'a [f64])>) -> Self {
        PosteriorTarget {
            prior,
            terms,
            weight: 1.0,
        }
    }
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut v = self.prior.log_density_grad(theta, grad);
        for (s, y) in &self.terms {
            match s.loglik_grad(theta, y) {
                Ok((l, g)) => {
                    v += self.weight * l;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += self.weight * b;
                    }
                }
                Err(_) => return f64::NAN,
            }
        }
        v
    }
}

/// `log π(y_t | 𝒯(x)) + log ρ(x)` in reference coordinates.
struct IntermediateTarget<'a> {
    map: &'a ComposedMap,
    surrogate: &'a SurrogateLikelihood,
    y: &'a [f64],
}

impl LogDensity for IntermediateTarget<'_> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self
            .map
            .compose_with(x, |theta| self.surrogate.loglik_grad(theta, self.y))
        {
            Ok((_, v, g)) => {
                let mut lr = 0.0;
                for i in 0..x.len() {
                    grad[i] = g[i] - x[i];
                    lr -= 0.5 * x[i] * x[i];
                }
                v + lr
            }
            Err(_) => f64::NAN,
        }
    }
}

/// Online state: the running posterior map and its history.
#[derive(Clone, Debug)]
pub struct AssimilationState {
    cfg: AssimilationConfig,
    registry: Registry,
    prior: Gaussian,
    seed: u64,
    map: ComposedMap,
    observations: Vec<Vec<f64>>,
    history: Vec<StepRecord>,
}

impl AssimilationState {
    pub fn new(registry: Registry, prior: Gaussian, cfg: AssimilationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        check_dim(registry.n_theta(), prior.dim())?;
        Ok(AssimilationState {
            map: ComposedMap::identity(prior.dim()),
            cfg,
            registry,
            prior,
            seed,
            observations: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn step(&self) -> usize {
        self.observations.len()
    }

    pub fn map(&self) -> &ComposedMap {
        &self.map
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn config(&self) -> &AssimilationConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn prior(&self) -> &Gaussian {
        &self.prior
    }

    /// Running posterior `π(θ | y_{1:t})` (unnormalized) given the first
    /// `observations.len()` observations.
    fn posterior<'a>(&'a self, observations: &'a [Vec<f64>]) -> Result<PosteriorTarget<'a>> {
        let terms = observations
            .iter()
            .enumerate()
            .map(|(i, y)| Ok((self.registry.get(i + 1)?, y.as_slice())))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorTarget::new(&self.prior, terms))
    }

    /// Incorporates observation `y_t`, `t = step() + 1`.
    ///
    /// On a training error the state is left unchanged.
    pub fn assimilate(&mut self, y: &[f64]) -> Result<&StepRecord> {
        let t = self.step() + 1;
        let surrogate = self.registry.get(t)?;
        check_dim(surrogate.n_y(), y.len())?;
        let mut obs = self.observations.clone();
        obs.push(y.to_vec());

        let branch = match self.history.last() {
            None => Branch::Initial,
            Some(r) if !self.cfg.recover || r.diagnostics.within(self.cfg.tol_variance, self.cfg.tol_trace) => {
                Branch::Intermediate
            }
            Some(_) => Branch::Recovery,
        };

        let (fit, cost_training) = cost::measure(|| -> Result<_> {
            match branch {
                Branch::Intermediate => {
                    let target = IntermediateTarget {
                        map: &self.map,
                        surrogate,
                        y,
                    };
                    let seed = seeds::derive(self.seed, &[purpose::INTERMEDIATE, t as u64]);
                    fit_from_density(&target, &self.cfg.intermediate, seed)
                }
                Branch::Initial | Branch::Recovery => {
                    let target = self.posterior(&obs)?;
                    let seed = seeds::derive(self.seed, &[purpose::RECOVERY, t as u64]);
                    fit_from_density_with(&target, self.direct_init()?, &self.cfg.recovery, seed)
                }
            }
        });
        let fit = fit?;
        if !fit.converged {
            log::info!("step {t}: {} map stopped at the term budget", branch.as_str());
        }
        let (n_terms, order) = (fit.map.n_terms(), fit.map.order());
        let mut map = match branch {
            Branch::Intermediate => self.map.clone(),
            _ => ComposedMap::identity(self.prior.dim()),
        };
        map.push_inner(fit.map)?;

        let mut compressed = false;
        let mut compression_failed = false;
        let mut compression_mse = None;
        let mut cost_compression = 0;
        if self.cfg.compress && map.len() > self.cfg.l_max {
            let (res, c) = cost::measure(|| compress_map(&map, &self.cfg, self.seed, t));
            cost_compression = c;
            let (single, mse) = res?;
            compression_mse = Some(mse);
            match single {
                Some(m) => {
                    map = ComposedMap::from_layers(self.prior.dim(), vec![m])?;
                    compressed = true;
                }
                None => {
                    log::warn!("step {t}: compression residual {mse:.3e} above threshold, keeping the composition");
                    compression_failed = true;
                }
            }
        }

        let (diag, cost_diagnostics) = cost::measure(|| self.running_diagnostics(&map, &obs, t));
        let (diagnostics, diagnostics_failed) = match diag {
            Ok(d) => (d, false),
            Err(e) => {
                log::warn!("step {t}: diagnostics failed: {e}");
                let d = DiagnosticsReport {
                    variance: f64::INFINITY,
                    trace: f64::INFINITY,
                    n_test: 0,
                };
                (d, true)
            }
        };

        let summary_seed = seeds::derive(self.seed, &[purpose::POSTERIOR, t as u64]);
        let samples = push_samples(&map, self.cfg.n_summary, summary_seed)?;

        self.map = map;
        self.observations = obs;
        self.history.push(StepRecord {
            step: t,
            branch,
            n_terms,
            order,
            fit_converged: fit.converged,
            compressed,
            compression_failed,
            compression_mse,
            composition_length: self.map.len(),
            diagnostics,
            diagnostics_failed,
            cost_training,
            cost_compression,
            cost_diagnostics,
            marginals: marginals(&samples),
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Diagonal affine map matching the marginal means and deviations of
    /// the current posterior approximation (the prior before any step).
    fn direct_init(&self) -> Result<TriangularMap> {
        let (mean, std): (Vec<f64>, Vec<f64>) = match self.history.last() {
            Some(r) => r.marginals.iter().map(|m| (m.mean, m.std)).unzip(),
            None => {
                let cov = self.prior.cov();
                (0..self.prior.dim())
                    .map(|i| (self.prior.mean()[i], cov[(i, i)].sqrt()))
                    .unzip()
            }
        };
        let a = &self.cfg.recovery;
        TriangularMap::diagonal_affine(&mean, &std, a.family, a.quad_order)
    }

    fn running_diagnostics(&self, map: &ComposedMap, obs: &[Vec<f64>], t: usize) -> Result<DiagnosticsReport> {
        let mut target = self.posterior(obs)?;
        if let Some(k) = self.cfg.diag_subsample.filter(|&k| k < obs.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, &[purpose::DIAGNOSTICS, t as u64, 1]));
            let mut keep: Vec<usize> = sample_indices(&mut rng, obs.len(), k).into_vec();
            keep.sort_unstable();
            target.terms = keep.into_iter().map(|i| target.terms[i]).collect();
            target.weight = obs.len() as f64 / k as f64;
        }
        let seed = seeds::derive(self.seed, &[purpose::DIAGNOSTICS, t as u64]);
        let test = reference_samples(map.dim(), self.cfg.n_diagnostic, seed, 0);
        composed_diagnostics(map, &target, &test)
    }

    /// `n` posterior samples `𝒯_t(x^i)`, `x^i ~ ρ`; deterministic given `seed`.
    pub fn sample_posterior(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        push_samples(&self.map, n, seed)
    }
}

/// `n` samples `map(x^i)`, `x^i ~ ρ`; deterministic given `seed`.
pub fn push_samples(map: &ComposedMap, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    reference_samples(map.dim(), n, seed, 0)
        .iter()
        .map(|x| map.evaluate(x))
        .collect()
}

/// Regresses a single map onto `map`; `None` when the residual threshold
/// is missed. Also returns the held-out relative residual.
fn compress_map(
    map: &ComposedMap,
    cfg: &AssimilationConfig,
    seed: u64,
    t: usize,
) -> Result<(Option<TriangularMap>, f64)> {
    let seed = seeds::derive(seed, &[purpose::COMPRESSION, t as u64]);
    let x = reference_samples(map.dim(), cfg.n_compression, seed, 0);
    let z = x.iter().map(|xi| map.evaluate(xi)).collect::<Result<Vec<_>>>()?;
    let fit = fit_regression(&x, &z, &cfg.compression, seed)?;
    Ok((fit.converged.then_some(fit.map), fit.relative_mse))
}

/// Compresses an arbitrary composition (exposed for tests and tooling).
pub fn compress(map: &ComposedMap, cfg: &AssimilationConfig, seed: u64) -> Result<(Option<TriangularMap>, f64)> {
    compress_map(map, cfg, seed, 0)
}
