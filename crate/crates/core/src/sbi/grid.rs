use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats;

use super::surrogate::SurrogateLikelihood;

pub const GRID_FORMAT: &str = "tmsbi-loglik-grid";

/// Surrogate against exact log-likelihood at one `(θ, y)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub truth: f64,
    pub surrogate: f64,
    /// `|(truth - surrogate) / truth|`.
    pub rel_error: f64,
}

/// Regular grid for a scalar parameter: `n_theta` values on `[lo, hi]`, and
/// for each of them `n_y` data values on `mean(θ) ± half_width`.
pub fn scalar_grid<F>(
    lo: f64,
    hi: f64,
    n_theta: usize,
    n_y: usize,
    half_width: f64,
    mut mean: F,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>>
where
    F: FnMut(f64) -> Result<f64>,
{
    if n_theta < 2 || n_y < 2 || !(hi > lo) || !(half_width > 0.0) {
        return Err(Error::invalid("grid needs lo < hi, a positive width and two points per axis"));
    }
    let mut out = Vec::with_capacity(n_theta * n_y);
    for i in 0..n_theta {
        let th = lo + (hi - lo) * i as f64 / (n_theta - 1) as f64;
        let m = mean(th)?;
        for j in 0..n_y {
            let y = m - half_width + 2.0 * half_width * j as f64 / (n_y - 1) as f64;
            out.push((vec![th], vec![y]));
        }
    }
    Ok(out)
}

/// Relative log-likelihood error of a surrogate over `points`.
pub fn loglik_error_grid<F>(
    surrogate: &SurrogateLikelihood,
    points: &[(Vec<f64>, Vec<f64>)],
    mut truth: F,
) -> Result<Vec<GridPoint>>
where
    F: FnMut(&[f64], &[f64]) -> Result<f64>,
{
    points
        .iter()
        .map(|(th, y)| {
            let t = truth(th, y)?;
            let s = surrogate.loglik(th, y)?;
            Ok(GridPoint {
                theta: th.clone(),
                y: y.clone(),
                truth: t,
                surrogate: s,
                rel_error: ((t - s) / t).abs(),
            })
        })
        .collect()
}

pub fn median_rel_error(grid: &[GridPoint]) -> f64 {
    let mut e: Vec<f64> = grid.iter().map(|p| p.rel_error).collect();
    e.sort_by(f64::total_cmp);
    stats::quantile_sorted(&e, 0.5)
}

/// Columns `theta_*, y_*, truth, surrogate, rel_error`.
pub fn write_grid_csv(grid: &[GridPoint], path: &Path) -> Result<()> {
    let mut w = crate::tabular::writer(path, GRID_FORMAT)?;
    if let Some(p) = grid.first() {
        let mut head: Vec<String> = (1..=p.theta.len()).map(|i| format!("theta_{i}")).collect();
        head.extend((1..=p.y.len()).map(|i| format!("y_{i}")));
        head.extend(["truth", "surrogate", "rel_error"].map(String::from));
        w.write_record(&head)?;
    }
    for p in grid {
        let row: Vec<String> = p
            .theta
            .iter()
            .chain(&p.y)
            .chain([&p.truth, &p.surrogate, &p.rel_error])
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Direction, MapComponent, Standardization, TriangularMap};
    use crate::indexset::MultiIndexSet;
    use crate::polybasis::BasisFamily;

    #[test]
    fn exact_surrogate_has_zero_error() {
        // S(θ, y) = y - θ, i.e. y | θ ~ N(θ, 1)
        let fam = BasisFamily::default();
        let set = MultiIndexSet::diagonal_linear(2)
            .add_index(crate::indexset::MultiIndex::new(vec![1, 0]))
            .unwrap();
        let pos = |a: &[usize]| set.position(&crate::indexset::MultiIndex::new(a.to_vec())).unwrap();
        let mut w = vec![0.0; set.len()];
        w[pos(&[0, 1])] = crate::transport::softplus::inverse(1.0);
        w[pos(&[1, 0])] = -1.0;
        let c = MapComponent::new(set, w, fam, 32).unwrap();
        let map = TriangularMap::new(2, 1, Standardization::identity(2), vec![c], Direction::Pullback).unwrap();
        let s = SurrogateLikelihood::new(1, map).unwrap();
        let pts = scalar_grid(-1.0, 1.0, 5, 7, 2.0, |t| Ok(t)).unwrap();
        assert_eq!(pts.len(), 35);
        let g = loglik_error_grid(&s, &pts, |t, y| {
            let r = y[0] - t[0];
            Ok(-0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI).ln())
        })
        .unwrap();
        assert!(median_rel_error(&g) < 1e-12);
        assert!(g.iter().all(|p| p.rel_error < 1e-12));
    }
}
