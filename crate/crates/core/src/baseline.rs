//! Random-walk Metropolis–Hastings reference sampler, integrated
//! autocorrelation times and posterior comparison reports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::stats::{self, Marginal};

/// States, log-posterior values and acceptance count of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accepted: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.states.len() <= 1 {
            return 0.0;
        }
        self.accepted as f64 / (self.states.len() - 1) as f64
    }

    /// States after dropping the leading `fraction` of the chain.
    pub fn after_burn_in(&self, fraction: f64) -> &[Vec<f64>] {
        let skip = ((self.states.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        &self.states[skip.min(self.states.len())..]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::tabular::writer(path, CHAIN_FORMAT)?;
        let d = self.states.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
        header.push("log_post".into());
        w.write_record(&header)?;
        for (s, l) in self.states.iter().zip(&self.log_post) {
            let mut rec: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            rec.push(l.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const CHAIN_FORMAT: &str = "tmsbi-chain";

/// The adaptive-Metropolis proposal covariance `(2.4²/d) Σ`.
pub fn scaled_proposal(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov * (2.4 * 2.4 / cov.nrows() as f64)
}

/// Symmetric Gaussian random-walk Metropolis with proposal covariance
/// `proposal`, started at `theta0`. The returned chain has `n` states,
/// the first being `theta0`.
pub fn mh_chain<F>(mut log_post: F, theta0: &[f64], proposal: &DMatrix<f64>, n: usize, seed: u64) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = theta0.len();
    check_dim(d, proposal.nrows())?;
    check_dim(d, proposal.ncols())?;
    check_finite(theta0)?;
    if n == 0 {
        return Err(Error::invalid("chain length must be positive"));
    }
    let sym = (proposal - proposal.transpose()).abs().max() <= 1e-12 * proposal.abs().max().max(1e-300);
    let chol = if sym { proposal.clone().cholesky() } else { None };
    let l = chol.ok_or(Error::NotPositiveDefinite)?.l();

    let mut cur = theta0.to_vec();
    let mut lp = log_post(&cur);
    if !lp.is_finite() {
        return Err(Error::invalid("log posterior is not finite at the start"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = Chain {
        states: Vec::with_capacity(n),
        log_post: Vec::with_capacity(n),
        accepted: 0,
    };
    chain.states.push(cur.clone());
    chain.log_post.push(lp);
    let mut z = vec![0.0; d];
    let mut prop = vec![0.0; d];
    for _ in 1..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for i in 0..d {
            prop[i] = cur[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
        }
        let u: f64 = rng.random();
        let lq = log_post(&prop);
        if accepts(lp, lq, u) {
            cur.copy_from_slice(&prop);
            lp = lq;
            chain.accepted += 1;
        }
        chain.states.push(cur.clone());
        chain.log_post.push(lp);
    }
    Ok(chain)
}

/// Metropolis acceptance for a symmetric proposal; `u ∈ [0, 1)`.
/// Non-finite proposals are never accepted.
fn accepts(lp_cur: f64, lp_prop: f64, u: f64) -> bool {
    lp_prop.is_finite() && u.ln() < lp_prop - lp_cur
}

/// Integrated autocorrelation time `1 + 2 Σ_{k≤M} ρ_k`, with the window
/// `M` chosen as the first one satisfying `M ≥ 5 τ(M)`.
pub fn iact(series: &[f64]) -> Result<f64> {
    const MIN_LEN: usize = 1000;
    const WINDOW_FACTOR: f64 = 5.0;
    let n = series.len();
    if n < MIN_LEN {
        return Err(Error::SeriesTooShort { min: MIN_LEN, got: n });
    }
    let m = stats::mean(series);
    let c: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 1e-300) {
        return Err(Error::DegenerateSeries);
    }
    let mut tau = 1.0;
    for k in 1..n / 2 {
        let ck = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += 2.0 * ck / c0;
        if k as f64 >= WINDOW_FACTOR * tau {
            break;
        }
    }
    Ok(tau.max(1.0))
}

/// Per-marginal comparison of two sample sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub index: usize,
    pub a: Marginal,
    pub b: Marginal,
    pub iact_a: f64,
    pub iact_b: f64,
    pub mean_diff: f64,
    /// `sqrt(SE_a² + SE_b²)` with IACT-deflated sample sizes.
    pub combined_se: f64,
    /// `|mean_diff| / combined_se` (0 when both are zero).
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub marginals: Vec<MarginalComparison>,
    /// Agreement threshold in combined standard errors.
    pub threshold: f64,
}

impl ComparisonReport {
    pub fn agree(&self) -> bool {
        self.marginals.iter().all(|m| m.z < self.threshold)
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4} {:>12} {:>12} {:>10} {:>10} {:>8} {:>8} {:>12} {:>8}",
            "dim", "mean_a", "mean_b", "std_a", "std_b", "iact_a", "iact_b", "diff", "z"
        );
        for m in &self.marginals {
            let _ = writeln!(
                s,
                "{:>4} {:>12.6} {:>12.6} {:>10.6} {:>10.6} {:>8.2} {:>8.2} {:>12.3e} {:>8.3}",
                m.index + 1,
                m.a.mean,
                m.b.mean,
                m.a.std,
                m.b.std,
                m.iact_a,
                m.iact_b,
                m.mean_diff,
                m.z
            );
        }
        let _ = writeln!(
            s,
            "agreement within {} SE: {}",
            self.threshold,
            if self.agree() { "yes" } else { "no" }
        );
        s
    }
}

fn iact_or_one(series: &[f64]) -> f64 {
    // short or constant series are treated as independent draws
    iact(series).unwrap_or(1.0)
}

/// Compares marginals of two sample sets (for instance transport-map
/// samples and an MCMC chain after burn-in). Standard errors use the
/// IACT-deflated effective sample size of each set.
pub fn compare_posteriors(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<ComparisonReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: a.len().min(b.len()),
        });
    }
    let d = a[0].len();
    check_dim(d, b[0].len())?;
    let marginals = (0..d)
        .map(|j| {
            let (ca, cb) = (stats::column(a, j), stats::column(b, j));
            let (ma, mb) = (stats::marginal(&ca), stats::marginal(&cb));
            let (ia, ib) = (iact_or_one(&ca), iact_or_one(&cb));
            let se2 = ma.std * ma.std * ia / ca.len() as f64 + mb.std * mb.std * ib / cb.len() as f64;
            let diff = ma.mean - mb.mean;
            let se = se2.sqrt();
            let z = if diff == 0.0 { 0.0 } else { diff.abs() / se };
            MarginalComparison {
                index: j,
                a: ma,
                b: mb,
                iact_a: ia,
                iact_b: ib,
                mean_diff: diff,
                combined_se: se,
                z,
            }
        })
        .collect();
    Ok(ComparisonReport {
        marginals,
        threshold: 3.0,
    })
}
