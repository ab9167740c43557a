//! Marginal summaries of sample sets.

use serde::{Deserialize, Serialize};

/// Percentile levels reported for every marginal.
pub const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub std: f64,
    /// Values at [`PERCENTILES`].
    pub percentiles: [f64; 5],
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of sorted data, `p` in percent.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

pub fn marginal(values: &[f64]) -> Marginal {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Marginal {
        mean: mean(values),
        std: variance(values).sqrt(),
        percentiles: PERCENTILES.map(|p| quantile_sorted(&s, p)),
    }
}

/// One summary per column.
pub fn marginals(rows: &[Vec<f64>]) -> Vec<Marginal> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d).map(|j| marginal(&column(rows, j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_a_grid() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let m = marginal(&v);
        assert_eq!(m.percentiles, [5.0, 25.0, 50.0, 75.0, 95.0]);
        assert_eq!(m.mean, 50.0);
        assert!((quantile_sorted(&[0.0, 1.0], 50.0) - 0.5).abs() < 1e-15);
    }
}
