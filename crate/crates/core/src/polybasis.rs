//! Probabilists' Hermite polynomials with linear tails, and their tensor
//! products.
//!
//! Beyond `±tail_bound` each polynomial is replaced by its tangent line at
//! the bound, so values and first derivatives are continuous and the second
//! derivative vanishes in the tails.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::indexset::MultiIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    ProbabilistsHermite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisFamily {
    pub kind: BasisKind,
    pub max_order: usize,
    pub tail_bound: f64,
}

impl Default for BasisFamily {
    fn default() -> Self {
        BasisFamily {
            kind: BasisKind::ProbabilistsHermite,
            max_order: 5,
            tail_bound: 3.0,
        }
    }
}

/// Values and derivatives of orders `0..=n` at one point.
#[derive(Clone, Debug, Default)]
pub struct Table1d {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Table1d {
    pub fn with_order(n: usize) -> Self {
        Table1d {
            value: vec![0.0; n + 1],
            d1: vec![0.0; n + 1],
            d2: vec![0.0; n + 1],
        }
    }
}

impl BasisFamily {
    pub fn new(max_order: usize, tail_bound: f64) -> Result<Self> {
        if max_order < 1 {
            return Err(Error::invalid("max_order must be at least 1"));
        }
        if !(tail_bound > 0.0) {
            return Err(Error::invalid("tail_bound must be positive"));
        }
        Ok(BasisFamily {
            kind: BasisKind::ProbabilistsHermite,
            max_order,
            tail_bound,
        })
    }

    /// Fills `out` with φ_m, φ'_m, φ''_m for m = 0..=out.value.len()-1.
    pub fn fill(&self, x: f64, out: &mut Table1d) {
        let n = out.value.len() - 1;
        let b = self.tail_bound;
        if x.abs() <= b {
            hermite_raw(x, n, &mut out.value, &mut out.d1, &mut out.d2);
        } else {
            let edge = b.copysign(x);
            hermite_raw(edge, n, &mut out.value, &mut out.d1, &mut out.d2);
            let dx = x - edge;
            for m in 0..=n {
                out.value[m] += out.d1[m] * dx;
                out.d2[m] = 0.0;
            }
        }
    }

    /// First derivatives only, for orders `0..=out.len()-1`.
    #[inline]
    pub fn fill_d1(&self, x: f64, out: &mut [f64]) {
        let xc = x.clamp(-self.tail_bound, self.tail_bound);
        // He'_m = m He_{m-1}
        let n = out.len() - 1;
        out[0] = 0.0;
        if n == 0 {
            return;
        }
        let (mut hm1, mut h) = (0.0, 1.0);
        for m in 1..=n {
            out[m] = m as f64 * h;
            let next = xc * h - (m - 1) as f64 * hm1;
            hm1 = h;
            h = next;
        }
    }

    /// φ_order(x).
    pub fn eval_1d(&self, order: usize, x: f64) -> Result<f64> {
        Ok(self.eval_1d_derivs(order, x)?.0)
    }

    /// (φ, φ', φ'') for one order.
    pub fn eval_1d_derivs(&self, order: usize, x: f64) -> Result<(f64, f64, f64)> {
        if order > self.max_order {
            return Err(Error::OrderOutOfRange {
                order,
                max: self.max_order,
            });
        }
        let mut t = Table1d::with_order(order);
        self.fill(x, &mut t);
        Ok((t.value[order], t.d1[order], t.d2[order]))
    }

    /// Tensor-product basis Φ_α(x) and its gradient.
    pub fn eval_multi(&self, alpha: &MultiIndex, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(alpha.dim(), x.len())?;
        let d = x.len();
        let mut vals = Vec::with_capacity(d);
        let mut ders = Vec::with_capacity(d);
        for (j, &o) in alpha.orders().iter().enumerate() {
            let (v, dv, _) = self.eval_1d_derivs(o, x[j])?;
            vals.push(v);
            ders.push(dv);
        }
        let value: f64 = vals.iter().product();
        let grad = (0..d)
            .map(|j| {
                (0..d)
                    .map(|i| if i == j { ders[i] } else { vals[i] })
                    .product()
            })
            .collect();
        Ok((value, grad))
    }
}

/// Three-term recurrence He_{m+1} = x He_m − m He_{m−1}, with
/// He'_m = m He_{m−1} and He''_m = m (m−1) He_{m−2}.
fn hermite_raw(x: f64, n: usize, v: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
    v[0] = 1.0;
    if n >= 1 {
        v[1] = x;
    }
    for m in 1..n {
        v[m + 1] = x * v[m] - m as f64 * v[m - 1];
    }
    d1[0] = 0.0;
    d2[0] = 0.0;
    for m in 1..=n {
        d1[m] = m as f64 * v[m - 1];
        d2[m] = if m >= 2 {
            (m * (m - 1)) as f64 * v[m - 2]
        } else {
            0.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fam() -> BasisFamily {
        BasisFamily::new(5, 3.0).unwrap()
    }

    #[test]
    fn low_order_values() {
        let f = fam();
        assert_eq!(f.eval_1d(0, 3.7).unwrap(), 1.0);
        assert_eq!(f.eval_1d(2, 1.0).unwrap(), 0.0);
        // He_3(0.5) = 0.125 - 1.5
        assert!((f.eval_1d(3, 0.5).unwrap() - (-1.375)).abs() < 1e-15);
    }

    #[test]
    fn order_out_of_range() {
        assert!(matches!(
            fam().eval_1d(6, 0.0),
            Err(Error::OrderOutOfRange { order: 6, max: 5 })
        ));
    }

    #[test]
    fn multi_examples() {
        let f = fam();
        let (v, g) = f.eval_multi(&MultiIndex::new(vec![0, 0]), &[2.0, -1.0]).unwrap();
        assert_eq!((v, g), (1.0, vec![0.0, 0.0]));

        let (a, b) = (0.7, -1.3);
        let (v, g) = f.eval_multi(&MultiIndex::new(vec![1, 1]), &[a, b]).unwrap();
        assert!((v - a * b).abs() < 1e-15);
        assert!((g[0] - b).abs() < 1e-15 && (g[1] - a).abs() < 1e-15);

        // (x1^2 - 1) x2 at (1, 2)
        let (v, g) = f.eval_multi(&MultiIndex::new(vec![2, 1]), &[1.0, 2.0]).unwrap();
        assert!(v.abs() < 1e-15);
        assert!((g[0] - 4.0).abs() < 1e-14 && g[1].abs() < 1e-15);

        assert!(matches!(
            f.eval_multi(&MultiIndex::new(vec![1]), &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_index_is_one_everywhere() {
        let f = fam();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
            let (v, g) = f.eval_multi(&MultiIndex::zero(3), &x).unwrap();
            assert_eq!(v, 1.0);
            assert!(g.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let f = fam();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let d = rng.random_range(1..=3);
            let alpha = MultiIndex::new((0..d).map(|_| rng.random_range(0..=5)).collect());
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, g) = f.eval_multi(&alpha, &x).unwrap();
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f.eval_multi(&alpha, &xp).unwrap().0 - f.eval_multi(&alpha, &xm).unwrap().0)
                    / (2.0 * h);
                let scale = g[j].abs().max(1.0);
                assert!((fd - g[j]).abs() / scale < 1e-5, "alpha {alpha} x {x:?} j {j}");
            }
        }
    }

    #[test]
    fn continuous_at_tail_bound() {
        let f = fam();
        let b = f.tail_bound;
        for edge in [b, -b] {
            for m in 0..=5 {
                let inside = f.eval_1d_derivs(m, edge).unwrap();
                let outside = f.eval_1d_derivs(m, edge + 1e-13f64.copysign(edge)).unwrap();
                assert!((inside.0 - outside.0).abs() < 1e-12 * inside.0.abs().max(1.0));
                assert!((inside.1 - outside.1).abs() < 1e-12 * inside.1.abs().max(1.0));
            }
        }
    }

    #[test]
    fn tail_is_linear() {
        let f = fam();
        let (v5, d5, dd5) = f.eval_1d_derivs(3, 5.0).unwrap();
        let (v3, d3, _) = f.eval_1d_derivs(3, 3.0).unwrap();
        assert_eq!(d5, d3);
        assert_eq!(dd5, 0.0);
        assert!((v5 - (v3 + 2.0 * d3)).abs() < 1e-12);
    }

    #[test]
    fn fill_d1_agrees_with_fill() {
        let f = fam();
        for &x in &[-4.0, -1.2, 0.0, 0.3, 2.9, 7.5] {
            let mut t = Table1d::with_order(5);
            f.fill(x, &mut t);
            let mut d = [0.0; 6];
            f.fill_d1(x, &mut d);
            for m in 0..=5 {
                assert!((d[m] - t.d1[m]).abs() < 1e-12);
            }
        }
    }
}
