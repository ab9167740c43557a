use serde::{Deserialize, Serialize};

use crate::density::{LogDensity, HALF_LN_2PI};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::polybasis::BasisFamily;

use super::component::{ComponentDerivs, MapComponent, Want};
use super::softplus;

/// The direction a map was trained in.
///
/// `Pullback` maps send target samples to the reference (`S^♯ρ ≈ π`);
/// `Forward` maps send reference samples to the target (`T_♯ρ ≈ π`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Pullback,
    Forward,
}

/// Per-variable affine pre-map `x ↦ (x - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Empirical mean and standard deviation of each column.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        let d = rows[0].len();
        let mut shift = vec![0.0; d];
        for r in rows {
            check_dim(d, r.len())?;
            for (s, v) in shift.iter_mut().zip(r) {
                *s += v;
            }
        }
        for s in shift.iter_mut() {
            *s /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                let e = r[j] - shift[j];
                var[j] += e * e;
            }
        }
        let mut scale = Vec::with_capacity(d);
        for (j, v) in var.into_iter().enumerate() {
            let s = (v / (n - 1) as f64).sqrt();
            if !(s > 1e-300) || !s.is_finite() {
                return Err(Error::DegenerateSamples { column: j });
            }
            scale.push(s);
        }
        Ok(Standardization { shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Log-determinant of the pre-map restricted to variables `from..`.
    pub fn log_det_from(&self, from: usize) -> f64 {
        -self.scale[from..].iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&v| v == 0.0) && self.scale.iter().all(|&v| v == 1.0)
    }
}

/// Lower-triangular map, possibly restricted to a trailing block of outputs.
///
/// Component `j` consumes standardized inputs `0..=offset + j`. Full maps have
/// `offset == 0`; a block map with `offset = n` keeps only the components
/// after the first `n` variables, which is how conditional densities are
/// represented.
#[derive(Clone, Debug)]
pub struct TriangularMap {
    dim: usize,
    offset: usize,
    standardization: Standardization,
    components: Vec<MapComponent>,
    direction: Direction,
}

impl TriangularMap {
    pub fn new(
        dim: usize,
        offset: usize,
        standardization: Standardization,
        components: Vec<MapComponent>,
        direction: Direction,
    ) -> Result<Self> {
        if dim == 0 || offset >= dim {
            return Err(Error::invalid(format!(
                "invalid map shape: dim {dim}, offset {offset}"
            )));
        }
        check_dim(dim, standardization.dim())?;
        check_dim(dim - offset, components.len())?;
        for (j, c) in components.iter().enumerate() {
            check_dim(offset + j + 1, c.dim())?;
        }
        if standardization.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("standardization scales must be positive"));
        }
        Ok(TriangularMap {
            dim,
            offset,
            standardization,
            components,
            direction,
        })
    }

    /// The identity on `R^dim`, as a forward map.
    pub fn identity(dim: usize, family: BasisFamily, quad_order: usize) -> Result<Self> {
        let comps = (1..=dim)
            .map(|k| MapComponent::identity(k, family, quad_order))
            .collect::<Result<_>>()?;
        Self::new(
            dim,
            0,
            Standardization::identity(dim),
            comps,
            Direction::Forward,
        )
    }

    /// Forward map `x_k ↦ shift_k + slope_k x_k` (`slope_k > 0`).
    pub fn diagonal_affine(
        shift: &[f64],
        slope: &[f64],
        family: BasisFamily,
        quad_order: usize,
    ) -> Result<Self> {
        check_dim(shift.len(), slope.len())?;
        let mut comps = Vec::with_capacity(shift.len());
        for (k, (&b, &a)) in shift.iter().zip(slope).enumerate() {
            if !(a > 0.0) {
                return Err(Error::invalid("affine slope must be positive"));
            }
            let mut c = MapComponent::identity(k + 1, family, quad_order)?;
            // members sorted: zero index first, then e_k
            c.set_coeffs(&[b, softplus::inverse(a)])?;
            comps.push(c);
        }
        Self::new(
            shift.len(),
            0,
            Standardization::identity(shift.len()),
            comps,
            Direction::Forward,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn n_outputs(&self) -> usize {
        self.dim - self.offset
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn components(&self) -> &[MapComponent] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [MapComponent] {
        &mut self.components
    }

    pub fn n_terms(&self) -> usize {
        self.components.iter().map(MapComponent::n_terms).sum()
    }

    /// Largest total polynomial degree over all components.
    pub fn order(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.index_set().max_total_order())
            .max()
            .unwrap_or(0)
    }

    pub fn is_full(&self) -> bool {
        self.offset == 0
    }

    fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_finite(x)?;
        Ok(self.standardization.apply(x))
    }

    fn eval_components(&self, xt: &[f64], want: Want) -> Result<Vec<ComponentDerivs>> {
        self.components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let mut d = ComponentDerivs::default();
                c.eval_derivs(&xt[..self.offset + j + 1], want, &mut d)?;
                Ok(d)
            })
            .collect()
    }

    /// Map outputs (one per component).
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_with_log_det(x)?.0)
    }

    /// Outputs and `log |det ∇S(x)|` over the block's own variables.
    pub fn eval_with_log_det(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let xt = self.standardize(x)?;
        let d = self.eval_components(&xt, Want::VALUE)?;
        let log_det =
            d.iter().map(|c| c.log_dk).sum::<f64>() + self.standardization.log_det_from(self.offset);
        Ok((d.into_iter().map(|c| c.value).collect(), log_det))
    }

    pub fn log_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_with_log_det(x)?.1)
    }

    /// Jacobian with respect to all `dim` inputs, row-major
    /// `n_outputs × dim`, lower triangular in the block's variables.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xt = self.standardize(x)?;
        let d = self.eval_components(&xt, Want::INPUT)?;
        let mut jac = vec![0.0; self.n_outputs() * self.dim];
        for (j, c) in d.iter().enumerate() {
            for (i, v) in c.d_value_d_input.iter().enumerate() {
                jac[j * self.dim + i] = v / self.standardization.scale[i];
            }
        }
        Ok(jac)
    }

    /// Inverse of a full map.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if !self.is_full() {
            return Err(Error::invalid("inverse of a block map needs a prefix"));
        }
        self.inverse_block(&[], z)
    }

    /// Solves the block for its variables given the leading `offset` inputs.
    pub fn inverse_block(&self, prefix: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.offset, prefix.len())?;
        check_dim(self.n_outputs(), z.len())?;
        let st = &self.standardization;
        let mut xt: Vec<f64> = prefix
            .iter()
            .enumerate()
            .map(|(i, v)| (v - st.shift[i]) / st.scale[i])
            .collect();
        for (j, c) in self.components.iter().enumerate() {
            let v = c.invert(&xt, z[j])?;
            xt.push(v);
        }
        Ok(xt[self.offset..]
            .iter()
            .enumerate()
            .map(|(j, v)| v * st.scale[self.offset + j] + st.shift[self.offset + j])
            .collect())
    }

    /// `log ρ(S(x)) + log |det ∇S(x)|` with `ρ` standard normal on the outputs.
    pub fn log_pullback(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det) = self.eval_with_log_det(x)?;
        Ok(reference_log(&z) + log_det)
    }

    /// Log pullback and its gradient with respect to all `dim` inputs.
    pub fn log_pullback_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let xt = self.standardize(x)?;
        let d = self.eval_components(&xt, Want::INPUT)?;
        let mut value = self.standardization.log_det_from(self.offset);
        let mut grad = vec![0.0; self.dim];
        for c in &d {
            value += -0.5 * c.value * c.value - HALF_LN_2PI + c.log_dk;
            for i in 0..c.d_value_d_input.len() {
                grad[i] += -c.value * c.d_value_d_input[i] + c.d_logdk_d_input[i];
            }
        }
        for (g, s) in grad.iter_mut().zip(&self.standardization.scale) {
            *g /= s;
        }
        Ok((value, grad))
    }

    /// `log π̄(S(x)) + log |det ∇S(x)|` for a full map, with its gradient in `x`
    /// when `with_grad` is set.
    pub fn pullback_target(
        &self,
        x: &[f64],
        target: &dyn LogDensity,
        with_grad: bool,
    ) -> Result<(Vec<f64>, f64, Option<Vec<f64>>)> {
        if !self.is_full() {
            return Err(Error::invalid("pullback of a target needs a full map"));
        }
        check_dim(self.dim, target.dim())?;
        if !with_grad {
            let (z, log_det) = self.eval_with_log_det(x)?;
            return Ok((z.clone(), target.log_density(&z) + log_det, None));
        }
        let (z, log_det, tape) = self.forward_tape(x)?;
        let mut tg = vec![0.0; self.dim];
        let lt = target.log_density_grad(&z, &mut tg);
        let grad = self.backprop(&tape, &tg);
        Ok((z, lt + log_det, Some(grad)))
    }

    /// Outputs, log-determinant and the per-component input derivatives.
    pub(crate) fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, f64, Vec<ComponentDerivs>)> {
        let xt = self.standardize(x)?;
        let d = self.eval_components(&xt, Want::INPUT)?;
        let log_det =
            d.iter().map(|c| c.log_dk).sum::<f64>() + self.standardization.log_det_from(self.offset);
        Ok((d.iter().map(|c| c.value).collect(), log_det, d))
    }

    /// `∇S(x)ᵀ upstream + ∇ log |det ∇S(x)|` from a tape of [`Self::forward_tape`].
    pub(crate) fn backprop(&self, tape: &[ComponentDerivs], upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim];
        for (j, c) in tape.iter().enumerate() {
            for i in 0..c.d_value_d_input.len() {
                grad[i] += upstream[j] * c.d_value_d_input[i] + c.d_logdk_d_input[i];
            }
        }
        for (g, s) in grad.iter_mut().zip(&self.standardization.scale) {
            *g /= s;
        }
        grad
    }

    /// `∇S(x)ᵀ upstream` from a tape of [`Self::forward_tape`].
    pub(crate) fn vjp(&self, tape: &[ComponentDerivs], upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim];
        for (j, c) in tape.iter().enumerate() {
            for i in 0..c.d_value_d_input.len() {
                grad[i] += upstream[j] * c.d_value_d_input[i];
            }
        }
        for (g, s) in grad.iter_mut().zip(&self.standardization.scale) {
            *g /= s;
        }
        grad
    }

    /// Flat coefficient vector, component by component.
    pub fn coeffs(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.coeffs().iter().copied())
            .collect()
    }

    pub fn set_coeffs(&mut self, w: &[f64]) -> Result<()> {
        check_dim(self.n_terms(), w.len())?;
        let mut at = 0;
        for c in &mut self.components {
            let n = c.n_terms();
            c.set_coeffs(&w[at..at + n])?;
            at += n;
        }
        Ok(())
    }
}

pub(crate) fn reference_log(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - z.len() as f64 * HALF_LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;
    use crate::indexset::{MultiIndex, MultiIndexSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fam() -> BasisFamily {
        BasisFamily::default()
    }

    fn random_map(rng: &mut ChaCha8Rng, dim: usize, offset: usize) -> TriangularMap {
        let comps = (offset + 1..=dim)
            .map(|k| {
                let mut set = MultiIndexSet::diagonal_linear(k);
                for _ in 0..rng.random_range(0..5) {
                    let rm: Vec<MultiIndex> = set
                        .reduced_margin()
                        .unwrap()
                        .into_iter()
                        .filter(|a| a.total_order() <= 3)
                        .collect();
                    if rm.is_empty() {
                        break;
                    }
                    let pick = rm[rng.random_range(0..rm.len())].clone();
                    set = set.add_index(pick).unwrap();
                }
                let w = set
                    .iter()
                    .map(|a| {
                        let f: f64 = (1..=a.total_order()).map(|v| v as f64).product();
                        rng.random_range(-0.4..0.4) / f
                    })
                    .collect();
                MapComponent::new(set, w, fam(), 32).unwrap()
            })
            .collect();
        let std = Standardization {
            shift: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            scale: (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        TriangularMap::new(dim, offset, std, comps, Direction::Pullback).unwrap()
    }

    #[test]
    fn identity_pullback_values() {
        let id1 = TriangularMap::identity(1, fam(), 32).unwrap();
        assert!((id1.log_pullback(&[0.0]).unwrap() - (-0.9189385332046727)).abs() < 1e-12);
        let id2 = TriangularMap::identity(2, fam(), 32).unwrap();
        let v = id2.log_pullback(&[0.0, 0.0]).unwrap();
        assert!((v - (-(2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((v + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn affine_pullback_is_gaussian() {
        // S(x) = (x - 2) / 0.5 as an identity component behind standardization
        let comp = MapComponent::identity(1, fam(), 32).unwrap();
        let st = Standardization {
            shift: vec![2.0],
            scale: vec![0.5],
        };
        let s = TriangularMap::new(1, 0, st, vec![comp], Direction::Pullback).unwrap();
        let g = Gaussian::diagonal(vec![2.0], &[0.5]).unwrap();
        for x in [2.0, 1.3, 3.1] {
            assert!((s.log_pullback(&[x]).unwrap() - g.log_density(&[x])).abs() < 1e-12);
        }
        assert!((s.log_pullback(&[2.0]).unwrap() + 0.2258).abs() < 1e-4);
    }

    #[test]
    fn jacobian_of_simple_maps() {
        let id = TriangularMap::identity(3, fam(), 32).unwrap();
        let j = id.jacobian(&[0.2, -1.0, 0.5]).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((j[r * 3 + c] - want).abs() < 1e-14);
            }
        }
        let comps = (1..=2)
            .map(|k| {
                MapComponent::new(MultiIndexSet::constant(k), vec![0.0], fam(), 32).unwrap()
            })
            .collect();
        let s = TriangularMap::new(2, 0, Standardization::identity(2), comps, Direction::Forward)
            .unwrap();
        let j = s.jacobian(&[0.7, -0.3]).unwrap();
        let l2 = 2f64.ln();
        assert!((j[0] - l2).abs() < 1e-15 && j[1] == 0.0);
        assert!(j[2].abs() < 1e-15 && (j[3] - l2).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..50 {
            let s = random_map(&mut rng, 3, 0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let j = s.jacobian(&x).unwrap();
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let zp = s.evaluate(&xp).unwrap();
                let zm = s.evaluate(&xm).unwrap();
                for r in 0..3 {
                    let fd = (zp[r] - zm[r]) / (2.0 * h);
                    let a = j[r * 3 + i];
                    assert!((fd - a).abs() / a.abs().max(1e-3) < 1e-5, "r{r} i{i} {fd} {a}");
                }
            }
        }
    }

    #[test]
    fn log_det_is_sum_of_log_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_map(&mut rng, 3, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let j = s.jacobian(&x).unwrap();
            let from_jac: f64 = (0..3).map(|i| j[i * 3 + i].ln()).sum();
            assert!((from_jac - s.log_det_jacobian(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn triangularity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_map(&mut rng, 3, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let base = s.evaluate(&x).unwrap();
            let mut y = x.clone();
            y[2] += rng.random_range(-5.0..5.0);
            let moved = s.evaluate(&y).unwrap();
            assert_eq!(base[0].to_bits(), moved[0].to_bits());
            assert_eq!(base[1].to_bits(), moved[1].to_bits());
        }
    }

    #[test]
    fn inverse_round_trip_full_and_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_map(&mut rng, 3, 0);
        let b = random_map(&mut rng, 3, 1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = s.evaluate(&x).unwrap();
            let back = s.inverse(&z).unwrap();
            for i in 0..3 {
                assert!((back[i] - x[i]).abs() < 1e-8);
            }
            let zb = b.evaluate(&x).unwrap();
            let yb = b.inverse_block(&x[..1], &zb).unwrap();
            assert!((yb[0] - x[1]).abs() < 1e-8 && (yb[1] - x[2]).abs() < 1e-8);
        }
    }

    #[test]
    fn log_pullback_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-6;
        for offset in [0, 1] {
            let s = random_map(&mut rng, 3, offset);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (v, g) = s.log_pullback_grad(&x).unwrap();
                assert!((v - s.log_pullback(&x).unwrap()).abs() < 1e-12);
                for i in 0..3 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (s.log_pullback(&xp).unwrap() - s.log_pullback(&xm).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() / g[i].abs().max(1e-2) < 1e-5, "{fd} {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn pullback_target_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = random_map(&mut rng, 2, 0);
        s.direction = Direction::Forward;
        let target = Gaussian::diagonal(vec![0.5, -1.0], &[0.7, 1.3]).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, v, g) = s.pullback_target(&x, &target, true).unwrap();
            let g = g.unwrap();
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fp = s.pullback_target(&xp, &target, false).unwrap().1;
                let fm = s.pullback_target(&xm, &target, false).unwrap().1;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[i]).abs() / g[i].abs().max(1e-2) < 1e-5);
            }
            assert!(v.is_finite());
        }
    }

    #[test]
    fn degenerate_column_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0]];
        assert!(matches!(
            Standardization::from_samples(&rows),
            Err(Error::DegenerateSamples { column: 0 })
        ));
    }

    #[test]
    fn diagonal_affine_map() {
        let t = TriangularMap::diagonal_affine(&[1.0, -2.0], &[2.0, 0.5], fam(), 32).unwrap();
        let z = t.evaluate(&[0.5, 4.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12 && (z[1] - 0.0).abs() < 1e-12);
    }
}
