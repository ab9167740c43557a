//! Monotone triangular transport maps.
//!
//! Components are built with the rectifier construction, so every component
//! is strictly increasing in its last input for any coefficient vector. A
//! [`TriangularMap`] stacks components behind an affine standardization and a
//! [`ComposedMap`] chains forward maps.

mod component;
mod composed;
mod file;
mod triangular;

pub use component::{ComponentDerivs, MapComponent, Want};
pub use composed::ComposedMap;
pub use file::{ComponentRecord, MapFile, MAP_FORMAT, MAP_FORMAT_VERSION};
pub use triangular::{Direction, Standardization, TriangularMap};

use crate::density::{LogDensity, HALF_LN_2PI};

/// Standard normal reference `ρ` on `R^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceDensity {
    pub dim: usize,
}

impl ReferenceDensity {
    pub fn new(dim: usize) -> Self {
        ReferenceDensity { dim }
    }
}

impl LogDensity for ReferenceDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() - self.dim as f64 * HALF_LN_2PI
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        self.log_density(x)
    }
}

/// Softplus `g(a) = ln(1 + e^a)` and friends, in overflow-safe forms.
pub mod softplus {
    #[inline]
    pub fn value(a: f64) -> f64 {
        if a > 0.0 {
            a + (-a).exp().ln_1p()
        } else {
            a.exp().ln_1p()
        }
    }

    /// `g'(a)`, the logistic sigmoid.
    #[inline]
    pub fn deriv(a: f64) -> f64 {
        if a >= 0.0 {
            1.0 / (1.0 + (-a).exp())
        } else {
            let e = a.exp();
            e / (1.0 + e)
        }
    }

    /// `ln g(a)`, accurate when `g(a)` underflows.
    #[inline]
    pub fn log_value(a: f64) -> f64 {
        if a < -30.0 {
            // g(a) = e^a (1 - e^a/2 + ...)
            a - 0.5 * a.exp()
        } else {
            value(a).ln()
        }
    }

    /// `g'(a) / g(a)`.
    #[inline]
    pub fn deriv_over_value(a: f64) -> f64 {
        if a < -30.0 {
            1.0 + 0.5 * a.exp()
        } else {
            deriv(a) / value(a)
        }
    }

    /// `G(a) = ∫_{-∞}^a g(s) ds = -Li₂(-e^a)`.
    pub fn antiderivative(a: f64) -> f64 {
        if a <= 0.0 {
            -li2_neg(-a.exp())
        } else {
            // inversion: Li₂(-e^a) + Li₂(-e^{-a}) = -π²/6 - a²/2
            std::f64::consts::PI.powi(2) / 6.0 + 0.5 * a * a + li2_neg(-(-a).exp())
        }
    }

    /// Dilogarithm on `[-1, 0]`.
    fn li2_neg(z: f64) -> f64 {
        if z < -0.5 {
            // Landen: Li₂(z) = -Li₂(z/(z-1)) - ½ ln²(1-z), with z/(z-1) in (1/3, 1/2]
            let l = (-z).ln_1p();
            -li2_series(z / (z - 1.0)) - 0.5 * l * l
        } else {
            li2_series(z)
        }
    }

    /// `Σ z^k / k²` for `|z| <= 1/2`.
    fn li2_series(z: f64) -> f64 {
        let mut sum = 0.0;
        let mut p = 1.0;
        for k in 1..=60 {
            p *= z;
            let term = p / (k * k) as f64;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// Solves `g(w) = v` for `v > 0`.
    pub fn inverse(v: f64) -> f64 {
        if v > 30.0 {
            v + (-(-v).exp()).ln_1p()
        } else {
            v.exp_m1().ln()
        }
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn stable_forms() {
            assert!((value(0.0) - 2f64.ln()).abs() < 1e-16);
            assert_eq!(value(800.0), 800.0);
            assert!(value(-800.0) >= 0.0);
            assert!((deriv(0.0) - 0.5).abs() < 1e-16);
            assert!((log_value(-50.0) - (-50.0)).abs() < 1e-12);
            for a in [-40.0, -31.0, -29.0, -1.0, 0.0, 3.0, 40.0] {
                assert!((inverse(value(a)) - a).abs() < 1e-9 * a.abs().max(1.0), "a={a}");
                let r = deriv_over_value(a);
                assert!(r.is_finite() && r > 0.0);
            }
            assert!((inverse(1.0) - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
        }

        #[test]
        fn antiderivative_known_values() {
            let pi2 = std::f64::consts::PI.powi(2);
            assert!((antiderivative(0.0) - pi2 / 12.0).abs() < 1e-15);
            // Li₂(-e^{ln 2}) = Li₂(-2) = -1.4367463668836809...
            assert!((antiderivative(2f64.ln()) - 1.4367463668836809).abs() < 1e-14);
            assert!((antiderivative(-40.0) - (-40f64).exp()).abs() < 1e-30);
        }

        #[test]
        fn antiderivative_matches_quadrature() {
            // G(b) - G(a) against composite Simpson on the softplus
            let simpson = |a: f64, b: f64| {
                let n = 20_000;
                let h = (b - a) / n as f64;
                let mut s = value(a) + value(b);
                for i in 1..n {
                    s += value(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                s * h / 3.0
            };
            for (a, b) in [(-30.0, -20.0), (-3.0, -0.7), (-0.7, 0.4), (-2.0, 5.0), (4.0, 30.0)] {
                let exact = simpson(a, b);
                let got = antiderivative(b) - antiderivative(a);
                assert!((got - exact).abs() <= 1e-12 * exact.abs(), "{a} {b}: {got} {exact}");
            }
        }
    }
}
