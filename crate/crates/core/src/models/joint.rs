//! Joint (θ, y) sample generation and the sample CSV format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::Gaussian;
use crate::error::{check_dim, Error, Result};
use crate::seeds;

use super::{call_model, ForwardModel};

pub const SAMPLES_FORMAT: &str = "tmsbi-samples";
pub const SAMPLES_FORMAT_VERSION: u32 = 1;

/// Proposal `π₀` for the parameters.
pub trait ProposalSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

impl ProposalSampler for Gaussian {
    fn dim(&self) -> usize {
        self.mean().len()
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample(rng)
    }
}

/// Uniform resampling of a fixed set of parameter samples (e.g. posterior
/// samples of an earlier step).
#[derive(Clone, Debug)]
pub struct EmpiricalProposal(pub Vec<Vec<f64>>);

impl ProposalSampler for EmpiricalProposal {
    fn dim(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.0[rng.random_range(0..self.0.len())].clone()
    }
}

/// Row-aligned parameter and output samples for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSampleSet {
    pub step: usize,
    pub seed: u64,
    pub model_id: String,
    pub theta: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Rows dropped because the model failed.
    pub skipped: usize,
}

impl JointSampleSet {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.first().map_or(0, Vec::len)
    }

    pub fn n_y(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    /// Rows `(θ, y)`, θ first.
    pub fn joint_rows(&self) -> Vec<Vec<f64>> {
        self.theta
            .iter()
            .zip(&self.y)
            .map(|(t, y)| t.iter().chain(y).copied().collect())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "# format={SAMPLES_FORMAT}")?;
        writeln!(f, "# version={SAMPLES_FORMAT_VERSION}")?;
        writeln!(f, "# model={}", self.model_id)?;
        writeln!(f, "# step={}", self.step)?;
        writeln!(f, "# seed={}", self.seed)?;
        writeln!(f, "# n_theta={}", self.n_theta())?;
        writeln!(f, "# n_y={}", self.n_y())?;
        writeln!(f, "# skipped={}", self.skipped)?;
        let mut w = csv::Writer::from_writer(f);
        let header: Vec<String> = (1..=self.n_theta())
            .map(|i| format!("theta_{i}"))
            .chain((1..=self.n_y()).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header)?;
        for row in self.joint_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        if get("format")? != SAMPLES_FORMAT {
            return Err(bad("not a sample file".into()));
        }
        let version: u32 = get("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != SAMPLES_FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let n_theta = num("n_theta")? as usize;
        let n_y = num("n_y")? as usize;
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut theta = Vec::new();
        let mut y = Vec::new();
        for rec in r.deserialize::<Vec<f64>>() {
            let row = rec?;
            check_dim(n_theta + n_y, row.len()).map_err(|e| bad(e.to_string()))?;
            theta.push(row[..n_theta].to_vec());
            y.push(row[n_theta..].to_vec());
        }
        Ok(JointSampleSet {
            step: num("step")? as usize,
            seed: num("seed")?,
            model_id: get("model")?,
            theta,
            y,
            skipped: num("skipped")? as usize,
        })
    }
}

/// Draws `n` rows `(θ^i, H_t(θ^i, ξ^i, η^i))` with `θ^i ~ π₀`.
///
/// Every row uses its own RNG stream, so the result does not depend on
/// evaluation order. Nuisance and noise draws are discarded. Rows on which
/// the model fails are skipped and counted.
pub fn generate_joint_samples(
    model: &dyn ForwardModel,
    proposal: &dyn ProposalSampler,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<JointSampleSet> {
    check_dim(model.n_theta(), proposal.dim())?;
    let step_seed = seeds::derive(seed, &[seeds::purpose::JOINT_SAMPLES, t as u64]);
    let mut theta = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut skipped = 0;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        rng.set_stream(i as u64);
        let th = proposal.draw(&mut rng);
        let xi = model.draw_nuisance(t, &mut rng);
        let eta = model.draw_noise(t, &mut rng);
        match call_model(model, &th, &xi, &eta, t) {
            Ok(out) => {
                theta.push(th);
                y.push(out);
            }
            Err(e) => {
                skipped += 1;
                log::debug!("row {i} skipped: {e}");
            }
        }
    }
    if skipped > 0 {
        log::warn!("step {t}: {skipped} of {n} model evaluations failed and were skipped");
    }
    Ok(JointSampleSet {
        step: t,
        seed,
        model_id: model.id(),
        theta,
        y,
        skipped,
    })
}

/// Observations `y_1, …, y_T` at a fixed parameter value.
pub fn simulate_observations(
    model: &dyn ForwardModel,
    theta: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_dim(model.n_theta(), theta.len())?;
    (1..=steps)
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::purpose::OBSERVATIONS, t as u64]));
            let xi = model.draw_nuisance(t, &mut rng);
            let eta = model.draw_noise(t, &mut rng);
            call_model(model, theta, &xi, &eta, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sigma_eff, Em31Config, Em31Model, LinearGaussianModel};

    #[test]
    fn identity_model_without_noise() {
        let m = LinearGaussianModel { dim: 2, noise_std: 0.0 };
        let p = Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        let s = generate_joint_samples(&m, &p, 1, 50, 3).unwrap();
        assert_eq!(s.theta, s.y);
    }

    #[test]
    fn em31_noise_level_and_determinism() {
        let m = Em31Model::thickness(Em31Config::default());
        let p = Gaussian::diagonal(vec![2.0], &[0.25]).unwrap();
        let s = generate_joint_samples(&m, &p, 4, 20_000, 11).unwrap();
        let r: Vec<f64> = s
            .theta
            .iter()
            .zip(&s.y)
            .map(|(t, y)| y[0] - sigma_eff(t[0], &m.em31).unwrap())
            .collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((sd - 63.0).abs() < 3.0, "{sd}");
        let again = generate_joint_samples(&m, &p, 4, 20_000, 11).unwrap();
        assert_eq!(s, again);
        let other = generate_joint_samples(&m, &p, 5, 100, 11).unwrap();
        assert_ne!(other.theta[0], s.theta[0]);
    }

    #[test]
    fn theta_marginal_matches_proposal() {
        // Kolmogorov–Smirnov against N(2, 0.25²)
        let m = Em31Model::thickness(Em31Config::default());
        let p = Gaussian::diagonal(vec![2.0], &[0.25]).unwrap();
        let s = generate_joint_samples(&m, &p, 1, 20_000, 5).unwrap();
        let mut x: Vec<f64> = s.theta.iter().map(|t| t[0]).collect();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let cdf = |v: f64| 0.5 * (1.0 + erf((v - 2.0) / (0.25 * 2f64.sqrt())));
        let d = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value 1.628/√n
        assert!(d < 1.628 / n.sqrt(), "{d}");
    }

    fn erf(x: f64) -> f64 {
        // Maclaurin series, ample for |x| <= 5 at KS precision
        if x.abs() > 5.0 {
            return x.signum();
        }
        let mut sum = x;
        let mut term = x;
        let x2 = x * x;
        for k in 1..200 {
            term *= -x2 / k as f64;
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn csv_round_trip() {
        let m = LinearGaussianModel { dim: 1, noise_std: 1.0 };
        let p = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
        let s = generate_joint_samples(&m, &p, 2, 30, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        let back = JointSampleSet::read_csv(&path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn failing_rows_are_skipped() {
        // prior mass below zero thickness makes some evaluations fail
        let m = Em31Model::thickness(Em31Config::default());
        let p = Gaussian::diagonal(vec![0.0], &[1.0]).unwrap();
        let s = generate_joint_samples(&m, &p, 1, 200, 1).unwrap();
        assert!(s.skipped > 50 && s.len() + s.skipped == 200);
    }
}
