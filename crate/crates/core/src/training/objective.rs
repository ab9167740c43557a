//! Discrete objectives with exact coefficient gradients.

use crate::density::{LogDensity, HALF_LN_2PI};
use crate::error::{check_dim, Error, Result};
use crate::transport::{ComponentDerivs, MapComponent, TriangularMap, Want};

fn want(grad: &Option<&mut [f64]>) -> Want {
    if grad.is_some() {
        Want::COEFF
    } else {
        Want::VALUE
    }
}

fn finite(v: f64, index: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteObjective { index })
    }
}

/// `Ĵ_k = -(1/n) Σ log S_k^♯ρ_k(x^i_{1:k})` for one component, where each
/// row holds at least `k` inputs. The gradient, when requested, is written
/// into `grad`.
pub fn from_samples(
    comp: &MapComponent,
    rows: &[Vec<f64>],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let k = comp.dim();
    let m = comp.n_terms();
    if let Some(g) = grad.as_deref_mut() {
        check_dim(m, g.len())?;
        g.fill(0.0);
    }
    let w = want(&grad);
    let mut d = ComponentDerivs::default();
    let mut total = 0.0;
    for (i, r) in rows.iter().enumerate() {
        comp.eval_derivs(&r[..k], w, &mut d)?;
        let term = finite(0.5 * d.value * d.value - d.log_dk, i)?;
        total += term;
        if let Some(g) = grad.as_deref_mut() {
            for j in 0..m {
                g[j] += d.value * d.d_value_d_coeff[j] - d.d_logdk_d_coeff[j];
            }
        }
    }
    let n = rows.len() as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok(total / n + HALF_LN_2PI)
}

/// `½ Σ (S_k(x^i) - z^i)²`.
pub fn regression(
    comp: &MapComponent,
    rows: &[Vec<f64>],
    targets: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_dim(rows.len(), targets.len())?;
    let k = comp.dim();
    let m = comp.n_terms();
    if let Some(g) = grad.as_deref_mut() {
        check_dim(m, g.len())?;
        g.fill(0.0);
    }
    let w = want(&grad);
    let mut d = ComponentDerivs::default();
    let mut total = 0.0;
    for (i, (r, &z)) in rows.iter().zip(targets).enumerate() {
        comp.eval_derivs(&r[..k], w, &mut d)?;
        let e = finite(d.value - z, i)?;
        total += 0.5 * e * e;
        if let Some(g) = grad.as_deref_mut() {
            for j in 0..m {
                g[j] += e * d.d_value_d_coeff[j];
            }
        }
    }
    Ok(total)
}

/// `Ĵ = -(1/n) Σ log T^♯π̄(x^i)` for a full forward map and reference
/// samples `x^i ~ ρ`. Gradient over the flat coefficient vector of `map`.
pub fn from_density(
    map: &TriangularMap,
    target: &dyn LogDensity,
    reference: &[Vec<f64>],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    if !map.is_full() {
        return Err(Error::invalid("from-density objective needs a full map"));
    }
    let dim = map.dim();
    check_dim(dim, target.dim())?;
    let n_terms = map.n_terms();
    if let Some(g) = grad.as_deref_mut() {
        check_dim(n_terms, g.len())?;
        g.fill(0.0);
    }
    let w = want(&grad);
    let st = map.standardization();
    let comps = map.components();
    let mut derivs = vec![ComponentDerivs::default(); dim];
    let mut z = vec![0.0; dim];
    let mut tg = vec![0.0; dim];
    let mut total = 0.0;
    for (i, x) in reference.iter().enumerate() {
        check_dim(dim, x.len())?;
        let xt = st.apply(x);
        let mut log_det = 0.0;
        for (k, c) in comps.iter().enumerate() {
            c.eval_derivs(&xt[..k + 1], w, &mut derivs[k])?;
            z[k] = derivs[k].value;
            log_det += derivs[k].log_dk;
        }
        let lt = if grad.is_some() {
            target.log_density_grad(&z, &mut tg)
        } else {
            target.log_density(&z)
        };
        total += finite(-(lt + log_det), i)?;
        if let Some(g) = grad.as_deref_mut() {
            let mut at = 0;
            for (k, d) in derivs.iter().enumerate() {
                for j in 0..d.d_value_d_coeff.len() {
                    g[at + j] -= tg[k] * d.d_value_d_coeff[j] + d.d_logdk_d_coeff[j];
                }
                at += d.d_value_d_coeff.len();
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective { index: i });
            }
        }
    }
    let n = reference.len() as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok(total / n - st.log_det_from(0))
}
