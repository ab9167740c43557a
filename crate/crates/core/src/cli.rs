//! Command-line driver: `simulate`, `train-likelihoods`, `assimilate`,
//! `mcmc` and `diagnose` over one TOML run configuration.
//!
//! Output layout below `output_dir`:
//!
//! ```text
//! config.toml                      resolved configuration
//! observations.csv, truth.json     simulate
//! samples/joint-NNNN.csv           train-likelihoods (joint samples)
//! registry/                        train-likelihoods (surrogates + manifest)
//! assimilation/                    log.json, steps.csv, maps/, posterior-samples.csv
//! mcmc/                            chain-NNNN.csv, iact.csv, comparison-NNNN.txt
//! diagnose/                        loglik-grid-NNNN.csv, summary.json
//! ```

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::baseline::{compare_posteriors, iact, mh_chain, scaled_proposal};
use crate::config::{LikelihoodChoice, ProposalSpec, RunConfig};
use crate::cost;
use crate::density::{Gaussian, LogDensity};
use crate::error::{Error, Result};
use crate::models::{self, generate_joint_samples, EmpiricalProposal, ProposalSampler};
use crate::sbi::{
    build_surrogate, loglik_error_grid, median_rel_error, push_samples, scalar_grid, write_grid_csv,
    AssimilationState, PosteriorTarget, Registry, RegistryEntry, StepRecord,
};
use crate::seeds::{self, purpose};
use crate::stats::{self, PERCENTILES};
use crate::tabular;
use crate::training::composed_diagnostics;
use crate::transport::ComposedMap;

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const REGISTRY_DIR: &str = "registry";
pub const ASSIMILATION_DIR: &str = "assimilation";

pub const OBSERVATIONS_FORMAT: &str = "tmsbi-observations";
pub const STEPS_FORMAT: &str = "tmsbi-steps";
pub const POSTERIOR_SAMPLES_FORMAT: &str = "tmsbi-posterior-samples";
pub const IACT_FORMAT: &str = "tmsbi-iact";
pub const RUN_LOG_FORMAT: &str = "tmsbi-run-log";

#[derive(Parser, Debug)]
#[command(name = "tmsbi", version, about = "Transport-map sequential simulation-based inference")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "tmsbi.toml")]
    pub config: PathBuf,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(short, long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the observation sequence at the reference parameter.
    Simulate {
        /// Overrides `simulate.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Build surrogate likelihoods from joint samples (observation-free phase).
    TrainLikelihoods {
        #[arg(long, env = "TMSBI_WORKERS")]
        workers: Option<usize>,
        /// Overrides `offline.n_samples`.
        #[arg(long)]
        n_samples: Option<usize>,
        /// Overrides `simulate.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Characterize the sequential posteriors (model-free phase).
    Assimilate,
    /// Metropolis-Hastings baseline started from the transport-map posterior.
    Mcmc {
        /// Steps to sample (overrides `mcmc.steps`).
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Overrides `mcmc.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Surrogate likelihood error grid and posterior map diagnostics.
    Diagnose {
        /// Overrides `diagnose.step`.
        #[arg(long)]
        step: Option<usize>,
    },
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 1 configuration error, 2 numerical failure.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.common.config)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.common.output_dir {
        cfg.output_dir = d;
    }
    match cli.command {
        Command::Simulate { steps } => {
            if let Some(s) = steps {
                cfg.simulate.steps = s;
            }
            cfg.validate()?;
            cmd_simulate(&cfg).map(|_| ())
        }
        Command::TrainLikelihoods {
            workers,
            n_samples,
            steps,
        } => {
            if let Some(n) = n_samples {
                cfg.offline.n_samples = n;
            }
            if let Some(s) = steps {
                cfg.simulate.steps = s;
            }
            if workers.is_some() {
                cfg.offline.workers = workers;
            }
            cfg.validate()?;
            cmd_train_likelihoods(&cfg).map(|_| ())
        }
        Command::Assimilate => cmd_assimilate(&cfg).map(|_| ()),
        Command::Mcmc { steps, n } => {
            if let Some(s) = steps {
                cfg.mcmc.steps = s;
            }
            if let Some(n) = n {
                cfg.mcmc.n = n;
            }
            cfg.validate()?;
            cmd_mcmc(&cfg).map(|_| ())
        }
        Command::Diagnose { step } => {
            if let Some(s) = step {
                cfg.diagnose.step = s;
            }
            cfg.validate()?;
            cmd_diagnose(&cfg).map(|_| ())
        }
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    format: &'a str,
    version: u32,
    model: &'a models::ModelSpec,
    theta_ref: Vec<f64>,
    steps: usize,
    seed: u64,
    observation_seed: u64,
}

/// Writes `observations.csv` and `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    cfg.write_copy()?;
    let model = cfg.model.build()?;
    let theta = cfg.theta_ref();
    let obs = models::simulate_observations(model.as_ref(), &theta, cfg.simulate.steps, cfg.seed)?;
    write_observations(&cfg.output_dir.join(OBSERVATIONS_FILE), model.n_y(), &obs)?;
    let truth = Truth {
        format: "tmsbi-truth",
        version: tabular::TABLE_VERSION,
        model: &cfg.model,
        theta_ref: theta,
        steps: cfg.simulate.steps,
        seed: cfg.seed,
        observation_seed: seeds::derive(cfg.seed, &[purpose::OBSERVATIONS]),
    };
    fs::write(cfg.output_dir.join(TRUTH_FILE), serde_json::to_string_pretty(&truth)?)?;
    log::info!("wrote {} observations", obs.len());
    Ok(obs)
}

pub fn write_observations(path: &Path, n_y: usize, obs: &[Vec<f64>]) -> Result<()> {
    let mut w = tabular::writer(path, OBSERVATIONS_FORMAT)?;
    let mut head = vec!["step".to_string()];
    head.extend((1..=n_y).map(|i| format!("y_{i}")));
    w.write_record(&head)?;
    for (t, y) in obs.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(y.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (_, rows) = tabular::read(path, OBSERVATIONS_FORMAT)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.first().copied() != Some((i + 1) as f64) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("row {} is not step {}", i + 1, i + 1),
                });
            }
            Ok(r[1..].to_vec())
        })
        .collect()
}

/// Parameter rows from the `theta_*` columns of a CSV file.
pub fn read_theta_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let cols: Vec<usize> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(bad("no theta_* columns".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(out)
}

fn proposal(cfg: &RunConfig) -> Result<Box<dyn ProposalSampler>> {
    Ok(match &cfg.proposal {
        ProposalSpec::Prior => Box::new(cfg.prior()?),
        ProposalSpec::Samples { path } => Box::new(EmpiricalProposal(read_theta_rows(path)?)),
    })
}

fn worker_count(cfg: &RunConfig) -> usize {
    cfg.offline.workers.unwrap_or(1).max(1)
}

/// Algorithm of the observation-free phase, one step per task, spread over
/// `offline.workers` threads. Failed steps are recorded in the manifest.
pub fn cmd_train_likelihoods(cfg: &RunConfig) -> Result<Registry> {
    cfg.write_copy()?;
    let proto = cfg.model.build()?;
    let (n_theta, n_y) = (proto.n_theta(), proto.n_y());
    let prop = proposal(cfg)?;
    if prop.dim() != n_theta {
        return Err(Error::Config("proposal dimension differs from the model".into()));
    }
    let samples_dir = cfg.output_dir.join("samples");
    fs::create_dir_all(&samples_dir)?;
    let steps = cfg.simulate.steps;
    let next = AtomicUsize::new(1);
    let registry = Mutex::new(Registry::new(n_theta, n_y));
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    let workers = worker_count(cfg).min(steps.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let model = match cfg.model.build() {
                    Ok(m) => m,
                    Err(e) => {
                        *fatal.lock().unwrap() = Some(e);
                        return;
                    }
                };
                loop {
                    let t = next.fetch_add(1, Ordering::SeqCst);
                    if t > steps {
                        break;
                    }
                    let result = train_step(cfg, model.as_ref(), prop.as_ref(), t, &samples_dir);
                    let mut reg = registry.lock().unwrap();
                    match result {
                        Ok((s, entry)) => {
                            let (terms, evals) = (s.block().n_terms(), entry.basis_evals);
                            match reg.insert(s, entry) {
                                Ok(()) => log::info!("step {t}: {terms} terms, {evals} basis evaluations"),
                                Err(e) => reg.record_failure(t, e.to_string()),
                            }
                        }
                        Err(e) if e.is_config_error() => {
                            *fatal.lock().unwrap() = Some(e);
                            break;
                        }
                        Err(e) => {
                            log::warn!("step {t}: training failed: {e}");
                            reg.record_failure(t, e.to_string());
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let registry = registry.into_inner().unwrap();
    registry.save(&cfg.output_dir.join(REGISTRY_DIR))?;
    let failed = steps - registry.len();
    if failed > 0 {
        log::warn!("{failed} of {steps} steps failed; see the registry manifest");
    }
    Ok(registry)
}

fn train_step(
    cfg: &RunConfig,
    model: &dyn models::ForwardModel,
    prop: &dyn ProposalSampler,
    t: usize,
    samples_dir: &Path,
) -> Result<(crate::sbi::SurrogateLikelihood, RegistryEntry)> {
    let joint = generate_joint_samples(model, prop, t, cfg.offline.n_samples, cfg.seed)?;
    joint.write_csv(&samples_dir.join(format!("joint-{t:04}.csv")))?;
    let fit = build_surrogate(
        &joint,
        &cfg.offline.atm,
        seeds::derive(cfg.seed, &[purpose::SURROGATE_FIT, t as u64]),
    )?;
    let entry = RegistryEntry {
        n_samples: joint.len(),
        skipped: joint.skipped,
        basis_evals: fit.basis_evals,
        ..RegistryEntry::default()
    };
    Ok((fit.surrogate, entry))
}

#[derive(Serialize)]
struct RunLog<'a> {
    format: &'a str,
    version: u32,
    seed: u64,
    steps: &'a [StepRecord],
}

/// Summary of an assimilation run.
pub struct AssimilationRun {
    pub records: Vec<StepRecord>,
    pub final_map: ComposedMap,
}

/// Algorithm of the model-free phase over all observations. Aborts on the
/// first missing surrogate.
pub fn cmd_assimilate(cfg: &RunConfig) -> Result<AssimilationRun> {
    cfg.validate()?;
    cfg.write_copy()?;
    let obs = read_observations(&cfg.output_dir.join(OBSERVATIONS_FILE))?;
    let registry = Registry::load(&cfg.output_dir.join(REGISTRY_DIR))?;
    if let Some(t) = (1..=obs.len()).find(|t| registry.get(*t).is_err()) {
        return Err(Error::MissingSurrogate(t));
    }
    let out = cfg.output_dir.join(ASSIMILATION_DIR);
    let maps = out.join("maps");
    fs::create_dir_all(&maps)?;
    let calls_before = models::model_calls();
    let mut state = AssimilationState::new(registry, cfg.prior()?, cfg.online.clone(), cfg.seed)?;
    for y in &obs {
        let r = state.assimilate(y)?.clone();
        log::info!(
            "step {}: {} (length {}, variance diag {:.2e}, cost {})",
            r.step,
            r.branch.as_str(),
            r.composition_length,
            r.diagnostics.variance,
            r.cost()
        );
        state.map().save(&maps.join(format!("posterior-{:04}.json", r.step)))?;
    }
    // the online phase never touches the forward model
    assert_eq!(models::model_calls(), calls_before, "model called during assimilation");
    let records = state.history().to_vec();
    let log = RunLog {
        format: RUN_LOG_FORMAT,
        version: tabular::TABLE_VERSION,
        seed: cfg.seed,
        steps: &records,
    };
    fs::write(out.join("log.json"), serde_json::to_string_pretty(&log)?)?;
    write_step_table(&out.join("steps.csv"), &records)?;
    if !obs.is_empty() {
        let seed = seeds::derive(cfg.seed, &[purpose::POSTERIOR, obs.len() as u64]);
        let samples = state.sample_posterior(cfg.online.n_summary, seed)?;
        write_theta_rows(&out.join("posterior-samples.csv"), &samples)?;
    }
    Ok(AssimilationRun {
        records,
        final_map: state.map().clone(),
    })
}

/// Tidy `(step, quantity, value)` table of the assimilation log.
pub fn write_step_table(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = tabular::writer(path, STEPS_FORMAT)?;
    w.write_record(["step", "quantity", "value"])?;
    for r in records {
        let mut rows: Vec<(String, f64)> = vec![
            ("branch_recovery".into(), f64::from(u8::from(r.branch == crate::sbi::Branch::Recovery))),
            ("compressed".into(), f64::from(u8::from(r.compressed))),
            ("composition_length".into(), r.composition_length as f64),
            ("n_terms".into(), r.n_terms as f64),
            ("variance_diag".into(), r.diagnostics.variance),
            ("trace_diag".into(), r.diagnostics.trace),
            ("cost".into(), r.cost() as f64),
            ("cost_training".into(), r.cost_training as f64),
            ("cost_compression".into(), r.cost_compression as f64),
            ("cost_diagnostics".into(), r.cost_diagnostics as f64),
        ];
        for (j, m) in r.marginals.iter().enumerate() {
            rows.push((format!("theta_{}_mean", j + 1), m.mean));
            rows.push((format!("theta_{}_std", j + 1), m.std));
            for (p, v) in PERCENTILES.iter().zip(&m.percentiles) {
                rows.push((format!("theta_{}_p{:02}", j + 1, *p as u32), *v));
            }
        }
        for (q, v) in rows {
            w.write_record([r.step.to_string(), q, v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_theta_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = tabular::writer(path, POSTERIOR_SAMPLES_FORMAT)?;
    let d = rows.first().map_or(0, Vec::len);
    w.write_record((1..=d).map(|i| format!("theta_{i}")))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn posterior_map_path(cfg: &RunConfig, t: usize) -> PathBuf {
    cfg.output_dir
        .join(ASSIMILATION_DIR)
        .join("maps")
        .join(format!("posterior-{t:04}.json"))
}

/// Sample mean and covariance of rows.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| stats::mean(&stats::column(rows, j))).collect();
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    (mean, cov / (n - 1.0))
}

/// Result of the baseline at one step.
pub struct McmcStep {
    pub step: usize,
    pub acceptance: f64,
    pub iact: Vec<f64>,
    pub agree: Option<bool>,
    pub model_calls: u64,
}

pub fn cmd_mcmc(cfg: &RunConfig) -> Result<Vec<McmcStep>> {
    cfg.write_copy()?;
    let obs = read_observations(&cfg.output_dir.join(OBSERVATIONS_FILE))?;
    let prior = cfg.prior()?;
    let steps = if cfg.mcmc.steps.is_empty() {
        vec![obs.len()]
    } else {
        cfg.mcmc.steps.clone()
    };
    let analytic = match cfg.mcmc.likelihood {
        LikelihoodChoice::Surrogate => None,
        LikelihoodChoice::Auto => cfg.model.gaussian_likelihood()?,
        LikelihoodChoice::Analytic => Some(cfg.model.gaussian_likelihood()?.ok_or_else(|| {
            Error::Config("the model has no closed-form likelihood; use likelihood = \"surrogate\"".into())
        })?),
    };
    let registry = match analytic {
        Some(_) => None,
        None => Some(Registry::load(&cfg.output_dir.join(REGISTRY_DIR))?),
    };
    let out = cfg.output_dir.join("mcmc");
    fs::create_dir_all(&out)?;
    let mut iact_rows = tabular::writer(&out.join("iact.csv"), IACT_FORMAT)?;
    iact_rows.write_record(["step", "dim", "iact"])?;
    let mut results = Vec::new();
    for &t in &steps {
        if t == 0 || t > obs.len() {
            return Err(Error::Config(format!("mcmc step {t} outside 1..={}", obs.len())));
        }
        let tm = match ComposedMap::load(&posterior_map_path(cfg, t)) {
            Ok(map) => {
                let seed = seeds::derive(cfg.seed, &[purpose::POSTERIOR, t as u64]);
                Some(push_samples(&map, cfg.online.n_summary, seed)?)
            }
            Err(e) => {
                log::warn!("step {t}: no transport-map posterior ({e}); starting from the prior");
                None
            }
        };
        let (start, cov) = match &tm {
            Some(rows) => mean_cov(rows),
            None => (prior.mean().to_vec(), prior.cov()),
        };
        let calls = models::model_calls();
        let log_post = |th: &[f64]| -> f64 {
            let mut lp = prior.log_density(th);
            for (k, y) in obs[..t].iter().enumerate() {
                let l = match (&analytic, &registry) {
                    (Some(a), _) => a.loglik(th, y, k + 1),
                    (None, Some(r)) => r.get(k + 1).and_then(|s| s.loglik(th, y)),
                    _ => unreachable!(),
                };
                match l {
                    Ok(v) if v.is_finite() => lp += v,
                    _ => return f64::NEG_INFINITY,
                }
            }
            lp
        };
        let seed = seeds::derive(cfg.seed, &[purpose::MCMC, t as u64]);
        let chain = mh_chain(log_post, &start, &scaled_proposal(&cov), cfg.mcmc.n, seed)?;
        let model_calls = models::model_calls() - calls;
        chain.write_csv(&out.join(format!("chain-{t:04}.csv")))?;
        let kept = chain.after_burn_in(cfg.mcmc.burn_in);
        let d = start.len();
        let mut iacts = Vec::with_capacity(d);
        for j in 0..d {
            let v = iact(&stats::column(kept, j)).unwrap_or(f64::NAN);
            iact_rows.write_record([t.to_string(), (j + 1).to_string(), v.to_string()])?;
            iacts.push(v);
        }
        let agree = match &tm {
            Some(rows) => {
                let rep = compare_posteriors(rows, kept)?;
                let table = rep.to_table();
                fs::write(out.join(format!("comparison-{t:04}.txt")), &table)?;
                println!("step {t} (a = transport map, b = MCMC)\n{table}");
                Some(rep.agree())
            }
            None => None,
        };
        log::info!(
            "step {t}: acceptance {:.3}, IACT {:?}, {model_calls} model calls",
            chain.acceptance_rate(),
            iacts
        );
        results.push(McmcStep {
            step: t,
            acceptance: chain.acceptance_rate(),
            iact: iacts,
            agree,
            model_calls,
        });
    }
    iact_rows.flush()?;
    Ok(results)
}

#[derive(Serialize)]
pub struct DiagnoseSummary {
    pub format: &'static str,
    pub version: u32,
    pub step: usize,
    /// Median relative log-likelihood error over the grid (scalar models
    /// with a closed-form likelihood only).
    pub median_rel_error: Option<f64>,
    pub max_rel_error: Option<f64>,
    /// Diagnostics of the saved posterior map at `step` against the
    /// surrogate posterior.
    pub variance_diag: Option<f64>,
    pub trace_diag: Option<f64>,
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseSummary> {
    cfg.write_copy()?;
    let t = cfg.diagnose.step;
    let registry = Registry::load(&cfg.output_dir.join(REGISTRY_DIR))?;
    let surrogate = registry.get(t)?;
    let out = cfg.output_dir.join("diagnose");
    fs::create_dir_all(&out)?;
    let prior = cfg.prior()?;
    let mut summary = DiagnoseSummary {
        format: "tmsbi-diagnose",
        version: tabular::TABLE_VERSION,
        step: t,
        median_rel_error: None,
        max_rel_error: None,
        variance_diag: None,
        trace_diag: None,
    };

    match cfg.model.gaussian_likelihood()? {
        Some(lik) if lik.n_theta() == 1 && surrogate.n_y() == 1 => {
            let g = &cfg.diagnose;
            let [lo, hi] = g.theta_range.unwrap_or_else(|| {
                let (m, s) = (prior.mean()[0], prior.cov()[(0, 0)].sqrt());
                [m - 4.0 * s, m + 4.0 * s]
            });
            let pts = scalar_grid(lo, hi, g.n_theta, g.n_y, g.y_half_width * lik.noise_std(), |th| {
                Ok(lik.mean(&[th], t)?[0])
            })?;
            let grid = loglik_error_grid(surrogate, &pts, |th, y| lik.loglik(th, y, t))?;
            write_grid_csv(&grid, &out.join(format!("loglik-grid-{t:04}.csv")))?;
            let med = median_rel_error(&grid);
            let max = grid.iter().map(|p| p.rel_error).fold(0.0, f64::max);
            println!("step {t}: log-likelihood relative error median {med:.3e}, max {max:.3e}");
            summary.median_rel_error = Some(med);
            summary.max_rel_error = Some(max);
        }
        _ => log::warn!("no closed-form scalar likelihood; skipping the error grid"),
    }

    match ComposedMap::load(&posterior_map_path(cfg, t)) {
        Ok(map) => {
            let obs = read_observations(&cfg.output_dir.join(OBSERVATIONS_FILE))?;
            if obs.len() < t {
                return Err(Error::Config(format!("only {} observations", obs.len())));
            }
            let terms = (1..=t)
                .map(|k| Ok((registry.get(k)?, obs[k - 1].as_slice())))
                .collect::<Result<Vec<_>>>()?;
            let target = PosteriorTarget::new(&prior, terms);
            let test = reference_rows(map.dim(), cfg.diagnose.n_test, cfg.seed);
            let (rep, _) = cost::measure(|| composed_diagnostics(&map, &target, &test));
            let rep = rep?;
            println!(
                "step {t}: posterior map variance diagnostic {:.3e}, trace diagnostic {:.3e}",
                rep.variance, rep.trace
            );
            summary.variance_diag = Some(rep.variance);
            summary.trace_diag = Some(rep.trace);
        }
        Err(e) => log::warn!("no posterior map for step {t} ({e}); skipping map diagnostics"),
    }
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn reference_rows(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let g = Gaussian::diagonal(vec![0.0; dim], &vec![1.0; dim]).expect("unit covariance");
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[purpose::DIAGNOSTICS]));
    (0..n).map(|_| g.sample(&mut rng)).collect()
}
