use crate::density::LogDensity;
use crate::error::{check_dim, Error, Result};

use super::triangular::{Direction, TriangularMap};

/// Composition `T_1 ∘ T_2 ∘ … ∘ T_m` of full forward maps.
///
/// Layers are stored outermost first; evaluation applies the last layer first.
#[derive(Clone, Debug)]
pub struct ComposedMap {
    dim: usize,
    layers: Vec<TriangularMap>,
}

impl ComposedMap {
    /// The empty composition (identity).
    pub fn identity(dim: usize) -> Self {
        ComposedMap {
            dim,
            layers: Vec::new(),
        }
    }

    pub fn from_layers(dim: usize, layers: Vec<TriangularMap>) -> Result<Self> {
        let mut c = Self::identity(dim);
        for l in layers {
            c.push_inner(l)?;
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[TriangularMap] {
        &self.layers
    }

    /// `self ← self ∘ map`.
    pub fn push_inner(&mut self, map: TriangularMap) -> Result<()> {
        check_dim(self.dim, map.dim())?;
        if !map.is_full() || map.direction() != Direction::Forward {
            return Err(Error::invalid("composition layers must be full forward maps"));
        }
        self.layers.push(map);
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut u = x.to_vec();
        for l in self.layers.iter().rev() {
            u = l.evaluate(&u)?;
        }
        Ok(u)
    }

    /// Output and `log |det ∇𝒯(x)|`.
    pub fn eval_with_log_det(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim, x.len())?;
        let mut u = x.to_vec();
        let mut ld = 0.0;
        for l in self.layers.iter().rev() {
            let (v, d) = l.eval_with_log_det(&u)?;
            u = v;
            ld += d;
        }
        Ok((u, ld))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        let mut u = z.to_vec();
        for l in &self.layers {
            u = l.inverse(&u)?;
        }
        Ok(u)
    }

    /// `log π̄(𝒯(x)) + log |det ∇𝒯(x)|`, with its gradient in `x` when asked.
    pub fn pullback_target(
        &self,
        x: &[f64],
        target: &dyn LogDensity,
        with_grad: bool,
    ) -> Result<(Vec<f64>, f64, Option<Vec<f64>>)> {
        check_dim(self.dim, target.dim())?;
        if !with_grad {
            let (z, ld) = self.eval_with_log_det(x)?;
            let v = target.log_density(&z);
            return Ok((z, v + ld, None));
        }
        check_dim(self.dim, x.len())?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut u = x.to_vec();
        let mut ld = 0.0;
        for l in self.layers.iter().rev() {
            let (v, d, tape) = l.forward_tape(&u)?;
            tapes.push(tape);
            u = v;
            ld += d;
        }
        let mut g = vec![0.0; self.dim];
        let lt = target.log_density_grad(&u, &mut g);
        // tapes are innermost first; walk outermost to innermost
        for (l, tape) in self.layers.iter().zip(tapes.iter().rev()) {
            g = l.backprop(tape, &g);
        }
        Ok((u, lt + ld, Some(g)))
    }

    /// `f(𝒯(x))` and its gradient in `x`, where `f` returns a value and its
    /// gradient at the mapped point. No Jacobian determinant is added.
    pub fn compose_with<F>(&self, x: &[f64], f: F) -> Result<(Vec<f64>, f64, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        check_dim(self.dim, x.len())?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut u = x.to_vec();
        for l in self.layers.iter().rev() {
            let (v, _, tape) = l.forward_tape(&u)?;
            tapes.push(tape);
            u = v;
        }
        let (value, mut g) = f(&u)?;
        check_dim(self.dim, g.len())?;
        for (l, tape) in self.layers.iter().zip(tapes.iter().rev()) {
            g = l.vjp(tape, &g);
        }
        Ok((u, value, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;
    use crate::polybasis::BasisFamily;

    fn affine(shift: &[f64], slope: &[f64]) -> TriangularMap {
        TriangularMap::diagonal_affine(shift, slope, BasisFamily::default(), 32).unwrap()
    }

    #[test]
    fn composition_order() {
        // T1(x) = x + 1, T2(x) = 2x: (T1 ∘ T2)(3) = 7
        let c = ComposedMap::from_layers(1, vec![affine(&[1.0], &[1.0]), affine(&[0.0], &[2.0])])
            .unwrap();
        assert!((c.evaluate(&[3.0]).unwrap()[0] - 7.0).abs() < 1e-12);
        let (_, ld) = c.eval_with_log_det(&[3.0]).unwrap();
        assert!((ld - 2f64.ln()).abs() < 1e-12);
        assert!((c.inverse(&[7.0]).unwrap()[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_is_identity() {
        let c = ComposedMap::identity(2);
        assert_eq!(c.evaluate(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = ComposedMap::from_layers(
            2,
            vec![affine(&[1.0, 0.2], &[1.5, 0.7]), affine(&[-0.3, 0.4], &[2.0, 1.1])],
        )
        .unwrap();
        let target = Gaussian::diagonal(vec![0.3, -0.4], &[0.8, 1.7]).unwrap();
        let x = [0.4, -1.2];
        let (_, _, g) = c.pullback_target(&x, &target, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (c.pullback_target(&xp, &target, false).unwrap().1
                - c.pullback_target(&xm, &target, false).unwrap().1)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{fd} {}", g[i]);
        }
    }

    #[test]
    fn compose_with_chains_gradients() {
        let c = ComposedMap::from_layers(1, vec![affine(&[1.0], &[3.0]), affine(&[0.5], &[2.0])])
            .unwrap();
        // f(u) = u²; 𝒯(x) = 3(2x + 0.5) + 1 = 6x + 2.5
        let (u, v, g) = c.compose_with(&[0.25], |u| Ok((u[0] * u[0], vec![2.0 * u[0]]))).unwrap();
        assert!((u[0] - 4.0).abs() < 1e-12);
        assert!((v - 16.0).abs() < 1e-11);
        assert!((g[0] - 48.0).abs() < 1e-10);
    }
}
