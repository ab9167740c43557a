//! Gauss–Legendre rules mapped to the unit interval.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Nodes `s_q ∈ (0, 1)` and weights `w_q` with `Σ w_q = 1`.
#[derive(Debug, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on P_n.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess for the i-th largest root.
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(GaussLegendre { nodes, weights })
    }

    /// Shared, cached rule of order `n`.
    pub fn shared(n: usize) -> Result<Arc<GaussLegendre>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        if let Some(rule) = guard.get(&n) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(GaussLegendre::new(n)?);
        guard.insert(n, Arc::clone(&rule));
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// ∫_a^b f.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let len = b - a;
        len * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(a + s * len))
            .sum::<f64>()
    }
}

/// (P_n(z), P_n'(z)).
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for n in [1, 2, 5, 16, 32, 64] {
            let r = GaussLegendre::new(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "n={n} sum={s}");
            assert!(r.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn exact_for_polynomials() {
        let r = GaussLegendre::new(8).unwrap();
        // degree 15 is exact for 8 nodes
        for p in 0..=15 {
            let got = r.integrate(0.0, 2.0, |x| x.powi(p));
            let want = 2f64.powi(p + 1) / (p + 1) as f64;
            assert!((got - want).abs() < 1e-11 * want, "p={p}");
        }
    }

    #[test]
    fn known_two_point_rule() {
        let r = GaussLegendre::new(2).unwrap();
        let off = 0.5 / 3f64.sqrt();
        assert!((r.nodes[0] - (0.5 - off)).abs() < 1e-15);
        assert!((r.nodes[1] - (0.5 + off)).abs() < 1e-15);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(GaussLegendre::new(0).is_err());
    }
}
