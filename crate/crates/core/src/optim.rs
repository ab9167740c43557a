//! Quasi-Newton minimization (BFGS with a strong-Wolfe line search).

use crate::cost;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub basis_evals: u64,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub converged: bool,
    /// The line search failed; the returned point is the best iterate seen.
    pub line_search_failed: bool,
}

/// Minimizes `f`, which returns the value and writes the gradient.
///
/// Errors from `f` at trial points inside the line search are treated as
/// `+∞`; an error at `w0` is returned.
pub fn minimize<F>(mut f: F, w0: &[f64], opts: MinimizeOptions) -> Result<(Vec<f64>, MinimizeReport)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let start = cost::current();
    let n = w0.len();
    let mut rep = MinimizeReport::default();
    let mut w = w0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&w, &mut g)?;
    rep.evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { index: 0 });
    }
    if n == 0 {
        rep.value = fx;
        rep.converged = true;
        return Ok((w, rep));
    }

    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut first = true;
    let mut stall = 0;
    let mut gn = inf_norm(&g);
    while rep.iterations < opts.max_iter && gn >= opts.grad_tol {
        let mut p = mat_vec(&h, &g);
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
        }
        let alpha0 = if first { (1.0 / inf_norm(&p)).min(1.0) } else { 1.0 };
        let ls = line_search(&mut f, &w, fx, &p, slope, alpha0, &mut rep.evaluations);
        let Some((alpha, f_new, g_new)) = ls else {
            if !first {
                // retry once from steepest descent before giving up
                h = identity(n);
                first = true;
                continue;
            }
            rep.line_search_failed = true;
            log::warn!("line search failed after {} iterations", rep.iterations);
            break;
        };
        let s: Vec<f64> = p.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (wi, si) in w.iter_mut().zip(&s) {
            *wi += si;
        }
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if first {
                // Shanno–Phua scaling of the initial inverse Hessian
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        first = false;
        let df = fx - f_new;
        fx = f_new;
        g = g_new;
        gn = inf_norm(&g);
        rep.iterations += 1;
        if df.abs() <= 1e-15 * fx.abs().max(1.0) {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    rep.value = fx;
    rep.grad_inf_norm = gn;
    rep.converged = gn < opts.grad_tol;
    rep.basis_evals = cost::current() - start;
    Ok((w, rep))
}

fn line_search<F>(
    f: &mut F,
    w: &[f64],
    f0: f64,
    p: &[f64],
    slope0: f64,
    alpha0: f64,
    evals: &mut usize,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let n = w.len();
    let mut trial = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut phi = |a: f64, grad: &mut Vec<f64>, evals: &mut usize| -> (f64, f64) {
        for i in 0..n {
            trial[i] = w[i] + a * p[i];
        }
        *evals += 1;
        match f(&trial, grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|x| x.is_finite()) => (v, dot(grad, p)),
            _ => (f64::INFINITY, f64::NAN),
        }
    };

    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, slope0);
    let mut a = alpha0;
    for i in 0..30 {
        let (fa, da) = phi(a, &mut grad, evals);
        if !fa.is_finite() {
            // shrink into the finite region
            a = 0.5 * (a_prev + a);
            if i == 29 {
                return None;
            }
            continue;
        }
        if fa > f0 + C1 * a * slope0 || (i > 0 && fa >= f_prev) {
            return zoom(&mut phi, f0, slope0, (a_prev, f_prev, d_prev), (a, fa, da), n, evals);
        }
        if da.abs() <= -C2 * slope0 {
            return Some((a, fa, grad));
        }
        if da >= 0.0 {
            return zoom(&mut phi, f0, slope0, (a, fa, da), (a_prev, f_prev, d_prev), n, evals);
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    None
}

fn zoom<P>(
    phi: &mut P,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    n: usize,
    evals: &mut usize,
) -> Option<(f64, f64, Vec<f64>)>
where
    P: FnMut(f64, &mut Vec<f64>, &mut usize) -> (f64, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..40 {
        let a = interpolate(lo, hi);
        let mut gbuf = vec![0.0; n];
        let (fa, da) = phi(a, &mut gbuf, evals);
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, gbuf.clone()));
        }
        if !fa.is_finite() || fa > f0 + C1 * a * slope0 || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -C2 * slope0 {
                return Some((a, fa, gbuf));
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // accept a sufficient-decrease point even if curvature failed
    best.filter(|b| b.1 <= f0 + C1 * b.0 * slope0)
}

/// Cubic interpolation between two bracket ends, safeguarded to the middle.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, d0) = lo;
    let (a1, f1, d1) = hi;
    let mid = 0.5 * (a0 + a1);
    if !(f1.is_finite() && d1.is_finite()) {
        return mid;
    }
    let d = a1 - a0;
    let t1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = t1 * t1 - d0 * d1;
    if disc < 0.0 {
        return mid;
    }
    let t2 = disc.sqrt().copysign(d);
    let a = a1 - d * (d1 + t2 - t1) / (d1 - d0 + 2.0 * t2);
    let (l, r) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let margin = 0.1 * (r - l);
    if a.is_finite() && a > l + margin && a < r - margin {
        a
    } else {
        mid
    }
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    // H ← H − ρ(s hyᵀ + hy sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
    let c = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + c * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_reaches_minimizer() {
        let a = [1.0, -2.0, 3.5, 0.25];
        let (w, rep) = minimize(
            |w, g| {
                let mut v = 0.0;
                for i in 0..4 {
                    g[i] = w[i] - a[i];
                    v += 0.5 * g[i] * g[i];
                }
                Ok(v)
            },
            &[0.0; 4],
            MinimizeOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        for i in 0..4 {
            assert!((w[i] - a[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let (w, rep) = minimize(
            |w, g| {
                let (x, y) = (w[0], w[1]);
                g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
                g[1] = 200.0 * (y - x * x);
                Ok((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
            },
            &[-1.2, 1.0],
            MinimizeOptions::default(),
        )
        .unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((w[0] - 1.0).abs() < 1e-6 && (w[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: finite only for w > 0
        let (w, _) = minimize(
            |w, g| {
                if w[0] <= 0.0 {
                    return Err(Error::NonFiniteObjective { index: 0 });
                }
                g[0] = 1.0 - 1.0 / w[0];
                Ok(w[0] - w[0].ln())
            },
            &[5.0],
            MinimizeOptions::default(),
        )
        .unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn error_at_start_is_returned() {
        let r = minimize(
            |_, _| Err(Error::NonFiniteObjective { index: 3 }),
            &[0.0],
            MinimizeOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonFiniteObjective { index: 3 })));
    }
}
