use std::sync::{Arc, OnceLock};

use crate::cost;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::indexset::MultiIndexSet;
use crate::polybasis::{BasisFamily, Table1d};
use crate::quadrature::GaussLegendre;

use super::softplus;

/// Which derivative blocks [`MapComponent::eval_derivs`] should fill.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Want {
    pub coeff: bool,
    pub input: bool,
}

impl Want {
    pub const VALUE: Want = Want {
        coeff: false,
        input: false,
    };
    pub const COEFF: Want = Want {
        coeff: true,
        input: false,
    };
    pub const INPUT: Want = Want {
        coeff: false,
        input: true,
    };
    pub const ALL: Want = Want {
        coeff: true,
        input: true,
    };
}

/// Value of one component together with the requested derivatives.
///
/// `d_value_d_input[k-1]` is the diagonal partial `dk`.
#[derive(Clone, Debug, Default)]
pub struct ComponentDerivs {
    pub value: f64,
    pub dk: f64,
    pub log_dk: f64,
    pub d_value_d_coeff: Vec<f64>,
    pub d_logdk_d_coeff: Vec<f64>,
    pub d_value_d_input: Vec<f64>,
    pub d_logdk_d_input: Vec<f64>,
}

/// One monotone component `S_k(x_1..x_k) = f(x_<k, 0) + ∫_0^{x_k} g(∂_k f(x_<k, t)) dt`
/// with `f = Σ w_α Φ_α` and `g` the softplus.
#[derive(Clone, Debug)]
pub struct MapComponent {
    index_set: MultiIndexSet,
    coeffs: Vec<f64>,
    family: BasisFamily,
    quad: Arc<GaussLegendre>,
}

impl MapComponent {
    pub fn new(
        index_set: MultiIndexSet,
        coeffs: Vec<f64>,
        family: BasisFamily,
        quad_order: usize,
    ) -> Result<Self> {
        check_dim(index_set.len(), coeffs.len())?;
        for a in index_set.iter() {
            if a.max_order() > family.max_order {
                return Err(Error::OrderOutOfRange {
                    order: a.max_order(),
                    max: family.max_order,
                });
            }
        }
        Ok(MapComponent {
            index_set,
            coeffs,
            family,
            quad: GaussLegendre::shared(quad_order)?,
        })
    }

    /// Component equal to `x_k` everywhere: `{0, e_k}` with `g(w) = 1`.
    pub fn identity(k: usize, family: BasisFamily, quad_order: usize) -> Result<Self> {
        let set = MultiIndexSet::diagonal_linear(k);
        let mut coeffs = vec![0.0; set.len()];
        let lin = crate::indexset::MultiIndex::axis(k, k - 1, 1);
        coeffs[set.position(&lin).expect("linear term present")] = softplus::inverse(1.0);
        Self::new(set, coeffs, family, quad_order)
    }

    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn quad_order(&self) -> usize {
        self.quad.order()
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn set_coeffs(&mut self, coeffs: &[f64]) -> Result<()> {
        check_dim(self.coeffs.len(), coeffs.len())?;
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    /// Same component with a different index set and coefficient vector.
    pub fn with_terms(&self, index_set: MultiIndexSet, coeffs: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), index_set.dim())?;
        Self::new(index_set, coeffs, self.family, self.quad.order())
    }

    /// (S_k(x), ∂_k S_k(x)).
    pub fn eval(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        check_finite(x)?;
        let mut out = ComponentDerivs::default();
        self.kernel(x, Want::VALUE, &mut out);
        Ok((out.value, out.dk))
    }

    /// Value plus the requested derivative blocks, written into `out`.
    pub fn eval_derivs(&self, x: &[f64], want: Want, out: &mut ComponentDerivs) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_finite(x)?;
        self.kernel(x, want, out);
        Ok(())
    }

    /// Gradient of `S_k(x)` with respect to the coefficients.
    pub fn grad_coeff(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = ComponentDerivs::default();
        self.eval_derivs(x, Want::COEFF, &mut out)?;
        Ok(out.d_value_d_coeff)
    }

    /// Row `∂S_k/∂x_j`, `j = 1..k`.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = ComponentDerivs::default();
        self.eval_derivs(x, Want::INPUT, &mut out)?;
        Ok(out.d_value_d_input)
    }

    /// Solves `S_k(prefix, x_k) = z` for `x_k`.
    ///
    /// Brackets by doubling from `[-1, 1]` (at most 60 doublings per side), then
    /// runs a safeguarded Newton/bisection iteration to a residual below 1e-10.
    pub fn invert(&self, prefix: &[f64], z: f64) -> Result<f64> {
        check_dim(self.dim() - 1, prefix.len())?;
        check_finite(prefix)?;
        if !z.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        const TOL: f64 = 1e-10;
        const MAX_DOUBLINGS: usize = 60;

        let mut x = prefix.to_vec();
        x.push(0.0);
        let k = self.dim() - 1;
        let mut scratch = ComponentDerivs::default();
        let mut eval = |t: f64, x: &mut Vec<f64>| -> (f64, f64) {
            x[k] = t;
            self.kernel(x, Want::VALUE, &mut scratch);
            (scratch.value - z, scratch.dk)
        };

        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let (mut r_lo, _) = eval(lo, &mut x);
        let mut n = 0;
        while r_lo > 0.0 {
            if n == MAX_DOUBLINGS {
                return Err(Error::BracketFailure { target: z });
            }
            hi = lo;
            lo *= 2.0;
            r_lo = eval(lo, &mut x).0;
            n += 1;
        }
        let (mut r_hi, _) = eval(hi, &mut x);
        n = 0;
        while r_hi < 0.0 {
            if n == MAX_DOUBLINGS {
                return Err(Error::BracketFailure { target: z });
            }
            lo = hi;
            hi *= 2.0;
            r_hi = eval(hi, &mut x).0;
            n += 1;
        }
        if r_lo.abs() < TOL {
            return Ok(lo);
        }
        if r_hi.abs() < TOL {
            return Ok(hi);
        }

        // Start from the secant point inside the bracket.
        let mut t = lo - r_lo * (hi - lo) / (r_hi - r_lo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let mut best = (f64::INFINITY, t);
        for _ in 0..200 {
            let (r, d) = eval(t, &mut x);
            if r.abs() < best.0 {
                best = (r.abs(), t);
            }
            if r == 0.0 || (r.abs() < TOL && (r / d).abs() <= 1e-13 * t.abs().max(1.0)) {
                return Ok(t);
            }
            if r < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - r / d;
            t = if newton > lo && newton < hi && d > 0.0 {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
                break;
            }
        }
        // Bracket collapsed to machine precision; residual is as small as
        // floating point allows.
        Ok(best.1)
    }

    /// Basis evaluations charged for one point evaluation.
    fn charge(&self, nodes: usize) {
        cost::record((self.coeffs.len() * (nodes + 2)) as u64);
    }

    fn kernel(&self, x: &[f64], want: Want, out: &mut ComponentDerivs) {
        let k = self.dim();
        let m = self.coeffs.len();
        let fam = &self.family;
        let members = self.index_set.members();
        let last = k - 1;
        let p_last = self.index_set.max_order_in(last);
        let need_u = want.coeff || want.input;

        // Prefix products P_j and (optionally) their partials.
        let mut tables: Vec<Table1d> = (0..last)
            .map(|i| {
                let mut t = Table1d::with_order(self.index_set.max_order_in(i));
                fam.fill(x[i], &mut t);
                t
            })
            .collect();
        let mut prod = vec![1.0; m];
        for (j, a) in members.iter().enumerate() {
            let o = a.orders();
            for (i, t) in tables.iter().enumerate() {
                prod[j] *= t.value[o[i]];
            }
        }
        // dprod[j * last + i] = ∂P_j / ∂x_i
        let mut dprod = Vec::new();
        if want.input && last > 0 {
            dprod = vec![0.0; m * last];
            for (j, a) in members.iter().enumerate() {
                let o = a.orders();
                for i in 0..last {
                    let mut v = tables[i].d1[o[i]];
                    for (l, t) in tables.iter().enumerate() {
                        if l != i {
                            v *= t.value[o[l]];
                        }
                    }
                    dprod[j * last + i] = v;
                }
            }
        }
        tables.clear();

        // Group by order in the last variable: c[o] = Σ_{α_k = o} w_α P_α.
        let np = p_last + 1;
        let mut c = vec![0.0; np];
        let mut dc = vec![0.0; if want.input { np * last } else { 0 }];
        for (j, a) in members.iter().enumerate() {
            let o = a.orders()[last];
            c[o] += self.coeffs[j] * prod[j];
            if want.input {
                for i in 0..last {
                    dc[i * np + o] += self.coeffs[j] * dprod[j * last + i];
                }
            }
        }

        let mut at_zero = Table1d::with_order(p_last);
        fam.fill(0.0, &mut at_zero);
        let mut at_x = Table1d::with_order(p_last);
        fam.fill(x[last], &mut at_x);

        // Integral of g(h(t)) on [0, x_k], and U[o] = ∫ g'(h(t)) φ'_o(t) dt.
        let xk = x[last];
        let mut integral = 0.0;
        let mut u = vec![0.0; if need_u { np } else { 0 }];
        let nodes_used;
        if p_last <= 1 {
            // ∂_k f does not depend on t: the integrand is constant.
            let h = if p_last == 1 { c[1] } else { 0.0 };
            integral = xk * softplus::value(h);
            if need_u {
                let gp = xk * softplus::deriv(h);
                for o in 0..np {
                    u[o] = gp * at_x.d1[o];
                }
            }
            nodes_used = 1;
        } else {
            let b = fam.tail_bound;
            let xc = xk.clamp(-b, b);
            let tail = xk - xc;
            let mut d1 = vec![0.0; np];
            if p_last == 2 {
                // He'_1 = 1, He'_2 = 2t: the integrand is g(c1 + 2 c2 t).
                let (i0, i1, i2) = affine_integrals(c[1], 2.0 * c[2], xc);
                integral = i0;
                if need_u {
                    u[1] = i1;
                    u[2] = 2.0 * i2;
                }
            } else {
                for (&s, &w) in self.quad.nodes.iter().zip(&self.quad.weights) {
                    fam.fill_d1(s * xc, &mut d1);
                    let h: f64 = c.iter().zip(&d1).map(|(a, b)| a * b).sum();
                    integral += w * softplus::value(h);
                    if need_u {
                        let gp = w * softplus::deriv(h);
                        for o in 0..np {
                            u[o] += gp * d1[o];
                        }
                    }
                }
                integral *= xc;
                for v in u.iter_mut() {
                    *v *= xc;
                }
            }
            if tail != 0.0 {
                // Linear tails make the integrand constant beyond the bound.
                fam.fill_d1(xc, &mut d1);
                let h: f64 = c.iter().zip(&d1).map(|(a, b)| a * b).sum();
                integral += tail * softplus::value(h);
                if need_u {
                    let gp = tail * softplus::deriv(h);
                    for o in 0..np {
                        u[o] += gp * d1[o];
                    }
                }
            }
            let body = if p_last == 2 { 1 } else { self.quad.order() };
            nodes_used = body + usize::from(tail != 0.0);
        }
        self.charge(nodes_used);

        let f0: f64 = c.iter().zip(&at_zero.value).map(|(a, b)| a * b).sum();
        let hx: f64 = c.iter().zip(&at_x.d1).map(|(a, b)| a * b).sum();
        out.value = f0 + integral;
        out.dk = softplus::value(hx);
        out.log_dk = softplus::log_value(hx);
        let ratio = softplus::deriv_over_value(hx);

        if want.coeff {
            out.d_value_d_coeff.resize(m, 0.0);
            out.d_logdk_d_coeff.resize(m, 0.0);
            for (j, a) in members.iter().enumerate() {
                let o = a.orders()[last];
                out.d_value_d_coeff[j] = prod[j] * (at_zero.value[o] + u[o]);
                out.d_logdk_d_coeff[j] = ratio * prod[j] * at_x.d1[o];
            }
        }
        if want.input {
            out.d_value_d_input.resize(k, 0.0);
            out.d_logdk_d_input.resize(k, 0.0);
            for i in 0..last {
                let row = &dc[i * np..(i + 1) * np];
                out.d_value_d_input[i] = (0..np).map(|o| row[o] * (at_zero.value[o] + u[o])).sum();
                out.d_logdk_d_input[i] =
                    ratio * (0..np).map(|o| row[o] * at_x.d1[o]).sum::<f64>();
            }
            out.d_value_d_input[last] = out.dk;
            out.d_logdk_d_input[last] =
                ratio * c.iter().zip(&at_x.d2).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

const TAYLOR_TERMS: usize = 24;

/// Coefficients of `g^{(n+1)}` as polynomials in `σ = g'`, `n < TAYLOR_TERMS`.
fn sigmoid_derivative_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        // σ' = σ - σ², so d/da P(σ) = P'(σ) (σ - σ²)
        let mut out = vec![vec![0.0, 1.0]];
        for n in 1..TAYLOR_TERMS {
            let p = &out[n - 1];
            let mut q = vec![0.0; p.len() + 1];
            for (j, &cj) in p.iter().enumerate().skip(1) {
                let d = j as f64 * cj;
                q[j] += d;
                q[j + 1] -= d;
            }
            out.push(q);
        }
        out
    })
}

/// `(∫ g(a+bt), ∫ g'(a+bt), ∫ t g'(a+bt))` over `t ∈ [0, x]`.
fn affine_integrals(a: f64, b: f64, x: f64) -> (f64, f64, f64) {
    let delta = b * x;
    if delta.abs() < 0.5 {
        // Taylor series in δ; g is analytic in a strip of half-width π.
        let s = softplus::deriv(a);
        let polys = sigmoid_derivative_polys();
        let (mut i0, mut i1, mut i2) = (softplus::value(a), 0.0, 0.0);
        let mut dn = 1.0; // δ^n / n!
        for (n, p) in polys.iter().enumerate() {
            let gn1 = p.iter().rev().fold(0.0, |acc, &c| acc * s + c);
            let nf = (n + 1) as f64;
            i1 += gn1 * dn / nf;
            i2 += gn1 * dn / (nf + 1.0);
            dn *= delta / nf;
            // the term of g^{(n+1)} in i0 carries δ^{n+1}/(n+2)!
            i0 += gn1 * dn / (nf + 1.0);
        }
        (x * i0, x * i1, x * x * i2)
    } else {
        let (g0, g1) = (softplus::value(a), softplus::value(a + delta));
        let i0 = (softplus::antiderivative(a + delta) - softplus::antiderivative(a)) / b;
        (i0, (g1 - g0) / b, (x * g1 - i0) / b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexset::MultiIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fam() -> BasisFamily {
        BasisFamily::default()
    }

    fn comp(dim: usize, rows: &[&[usize]], w: &[f64]) -> MapComponent {
        let set = MultiIndexSet::from_indices(
            dim,
            rows.iter().map(|r| MultiIndex::new(r.to_vec())).collect(),
        )
        .unwrap();
        // coefficients follow the caller's row order, the set is sorted
        let mut coeffs = vec![0.0; set.len()];
        for (r, &c) in rows.iter().zip(w) {
            coeffs[set.position(&MultiIndex::new(r.to_vec())).unwrap()] = c;
        }
        MapComponent::new(set, coeffs, fam(), 32).unwrap()
    }

    /// Random downward-closed component with total order <= 4.
    pub(crate) fn random_component(rng: &mut ChaCha8Rng, k: usize) -> MapComponent {
        let mut set = MultiIndexSet::diagonal_linear(k);
        for _ in 0..rng.random_range(0..6) {
            let rm: Vec<_> = set
                .reduced_margin()
                .unwrap()
                .into_iter()
                .filter(|a| a.total_order() <= 4)
                .collect();
            if rm.is_empty() {
                break;
            }
            let pick = rm[rng.random_range(0..rm.len())].clone();
            set = set.add_index(pick).unwrap();
        }
        let coeffs = set
            .iter()
            .map(|a| rng.random_range(-0.5..0.5) / factorial(a.total_order()))
            .collect();
        MapComponent::new(set, coeffs, fam(), 32).unwrap()
    }

    pub(crate) fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product()
    }

    /// Independent oracle: composite Simpson on a fine grid.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn affine_integrals_match_simpson() {
        for &(a, b, x) in &[
            (0.3, 0.1, 1.0),
            (-2.0, 0.49, 1.0),
            (-2.0, 0.51, 1.0),
            (1.0, -0.25, -1.9),
            (-25.0, 3.0, 2.5),
            (12.0, 4.0, -3.0),
            (0.0, 1e-9, 2.0),
        ] {
            let i0 = simpson(0.0, x, 20_000, |t| softplus::value(a + b * t));
            let i1 = simpson(0.0, x, 20_000, |t| softplus::deriv(a + b * t));
            let i2 = simpson(0.0, x, 20_000, |t| t * softplus::deriv(a + b * t));
            let got = affine_integrals(a, b, x);
            for (g, e) in [(got.0, i0), (got.1, i1), (got.2, i2)] {
                assert!((g - e).abs() <= 1e-11 * e.abs().max(1e-300), "{a} {b} {x}: {g} {e}");
            }
        }
    }

    #[test]
    fn constant_base_function() {
        let c = 0.7;
        let s = comp(1, &[&[0]], &[c]);
        for xk in [-2.0, 0.0, 1.5] {
            let (v, dk) = s.eval(&[xk]).unwrap();
            assert!((v - (c + 2f64.ln() * xk)).abs() < 1e-14);
            assert!((dk - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_base_function() {
        let s = comp(1, &[&[0], &[1]], &[0.0, 1.0]);
        let g1 = (1.0 + 1f64.exp()).ln();
        let (v, _) = s.eval(&[0.8]).unwrap();
        assert!((v - g1 * 0.8).abs() < 1e-14);
    }

    #[test]
    fn quadratic_base_function_against_simpson() {
        // f = He_2(x) + 1 = x^2, so ∂f = 2t
        let s = comp(1, &[&[0], &[1], &[2]], &[1.0, 0.0, 1.0]);
        let (v, _) = s.eval(&[1.0]).unwrap();
        let oracle = simpson(0.0, 1.0, 20_000, |t| (1.0 + (2.0 * t).exp()).ln());
        assert!((oracle - 1.345727).abs() < 1e-6);
        // f(0) = He_2(0) + 1 = 0
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
    }

    #[test]
    fn identity_component() {
        let s = MapComponent::identity(3, fam(), 32).unwrap();
        let (v, dk) = s.eval(&[0.3, -2.0, 1.7]).unwrap();
        assert!((v - 1.7).abs() < 1e-14 && (dk - 1.0).abs() < 1e-14);
    }

    #[test]
    fn invert_linear() {
        let s = comp(1, &[&[0]], &[0.0]);
        let x = s.invert(&[], 0.5).unwrap();
        assert!((x - 0.5 / 2f64.ln()).abs() < 1e-10);
        assert!((x - 0.7213).abs() < 1e-4);
    }

    #[test]
    fn invert_matches_bisection_oracle() {
        // strictly increasing, cubic-like in x_k
        let s = comp(1, &[&[0], &[1], &[2], &[3]], &[0.1, 0.3, 0.2, 0.4]);
        let f = |t: f64| s.eval(&[t]).unwrap().0;
        let (a, b) = (f(-10.0), f(10.0));
        for i in 1..20 {
            let z = a + (b - a) * i as f64 / 20.0;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < z {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            let root = s.invert(&[], z).unwrap();
            assert!((root - 0.5 * (lo + hi)).abs() < 1e-8);
            assert!((f(root) - z).abs() < 1e-10);
        }
    }

    #[test]
    fn invert_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(1..=3);
            let s = random_component(&mut rng, k);
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (z, _) = s.eval(&x).unwrap();
            let back = s.invert(&x[..k - 1], z).unwrap();
            assert!((back - x[k - 1]).abs() < 1e-8, "{back} vs {} set {:?} w {:?} x {:?}", x[k - 1], s.index_set().to_rows(), s.coeffs(), x);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = MapComponent::identity(2, fam(), 32).unwrap();
        assert!(matches!(s.eval(&[f64::NAN, 0.0]), Err(Error::NonFiniteInput)));
        assert!(matches!(s.invert(&[0.0], f64::INFINITY), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn coefficient_gradient_trivial_cases() {
        let s = comp(1, &[&[0]], &[0.0]);
        let g = s.grad_coeff(&[1.3]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15);

        let s = comp(1, &[&[0], &[1]], &[0.0, 0.0]);
        let g = s.grad_coeff(&[1.0]).unwrap();
        // ∫_0^1 softplus'(0) dt
        assert!((g[1] - 0.5).abs() < 1e-14);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let k = rng.random_range(1..=3);
            let s = random_component(&mut rng, k);
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let mut d = ComponentDerivs::default();
            s.eval_derivs(&x, Want::ALL, &mut d).unwrap();

            for j in 0..s.n_terms() {
                let mut wp = s.coeffs().to_vec();
                let mut wm = wp.clone();
                wp[j] += h;
                wm[j] -= h;
                let sp = s.with_terms(s.index_set().clone(), wp).unwrap();
                let sm = s.with_terms(s.index_set().clone(), wm).unwrap();
                let (vp, dp) = sp.eval(&x).unwrap();
                let (vm, dm) = sm.eval(&x).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                assert!(rel_err(fd, d.d_value_d_coeff[j]) < 1e-5, "coeff {j}: {fd} {}", d.d_value_d_coeff[j]);
                let fd = (dp.ln() - dm.ln()) / (2.0 * h);
                assert!(rel_err(fd, d.d_logdk_d_coeff[j]) < 1e-5);
            }
            for i in 0..k {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let (vp, dp) = s.eval(&xp).unwrap();
                let (vm, dm) = s.eval(&xm).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                assert!(rel_err(fd, d.d_value_d_input[i]) < 1e-5, "input {i}: {fd} {} set {:?} w {:?} x {:?}", d.d_value_d_input[i], s.index_set().to_rows(), s.coeffs(), x);
                let fd = (dp.ln() - dm.ln()) / (2.0 * h);
                assert!(rel_err(fd, d.d_logdk_d_input[i]) < 1e-5, "logdk input {i}: {fd} {}", d.d_logdk_d_input[i]);
            }
        }
    }

    #[test]
    fn monotone_for_arbitrary_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_component(&mut rng, 2);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..s.n_terms()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t = s.with_terms(s.index_set().clone(), w).unwrap();
            let x = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
            let (_, dk) = t.eval(&x).unwrap();
            assert!(dk > 0.0);
        }
    }

    #[test]
    fn cost_is_recorded() {
        // order 2 in the last variable is integrated in closed form
        let s = comp(1, &[&[0], &[1], &[2]], &[0.0, 1.0, 0.1]);
        let (_, n) = cost::measure(|| s.eval(&[0.5]).unwrap());
        assert_eq!(n, 3 * (1 + 2));
        let s = comp(1, &[&[0], &[1], &[2], &[3]], &[0.0, 1.0, 0.1, 0.01]);
        let (_, n) = cost::measure(|| s.eval(&[0.5]).unwrap());
        assert_eq!(n, 4 * (32 + 2));
    }
}
