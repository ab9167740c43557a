use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cost;
use crate::density::LogDensity;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::indexset::{MultiIndex, MultiIndexSet, OrderCaps};
use crate::optim::minimize;
use crate::stats;
use crate::transport::{softplus, Direction, MapComponent, Standardization, TriangularMap};

use super::diagnostics::{map_diagnostics, DiagnosticsReport};
use super::objective;
use super::{AtmConfig, TraceRow};

/// Pullback map trained from samples.
#[derive(Clone, Debug)]
pub struct SampleFit {
    pub map: TriangularMap,
    pub trace: Vec<TraceRow>,
}

/// Forward map trained against an unnormalized density.
#[derive(Clone, Debug)]
pub struct DensityFit {
    pub map: TriangularMap,
    pub trace: Vec<TraceRow>,
    pub diagnostics: DiagnosticsReport,
    /// Both diagnostics fell below tolerance.
    pub converged: bool,
}

/// Forward map fitted by least squares to input/output pairs.
#[derive(Clone, Debug)]
pub struct RegressionFit {
    pub map: TriangularMap,
    pub trace: Vec<TraceRow>,
    /// Largest held-out mean-squared residual over components.
    pub mse: f64,
    /// Largest held-out residual relative to the output variance.
    pub relative_mse: f64,
    pub converged: bool,
}

/// Objective gradient at zero for every capped reduced-margin candidate.
///
/// The current set is extended by its whole reduced margin (still downward
/// closed), candidate coefficients are set to zero, and one exact gradient
/// evaluation yields every candidate's partial derivative.
pub fn candidate_gradients<F>(
    comp: &MapComponent,
    caps: &OrderCaps,
    mut grad_of: F,
) -> Result<Vec<(MultiIndex, f64)>>
where
    F: FnMut(&MapComponent, &mut [f64]) -> Result<f64>,
{
    let (ext, cands) = extend_with_margin(comp, caps)?;
    if cands.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = vec![0.0; ext.n_terms()];
    grad_of(&ext, &mut g)?;
    Ok(cands
        .into_iter()
        .map(|a| {
            let p = ext.index_set().position(&a).expect("candidate present");
            (a, g[p])
        })
        .collect())
}

fn extend_with_margin(comp: &MapComponent, caps: &OrderCaps) -> Result<(MapComponent, Vec<MultiIndex>)> {
    let set = comp.index_set();
    let cands: Vec<MultiIndex> = set
        .reduced_margin_capped(caps)?
        .into_iter()
        .filter(|a| a.max_order() <= comp.family().max_order)
        .collect();
    let mut members = set.members().to_vec();
    members.extend(cands.iter().cloned());
    let ext_set = MultiIndexSet::from_indices(set.dim(), members)?;
    let mut w = vec![0.0; ext_set.len()];
    for (a, c) in set.iter().zip(comp.coeffs()) {
        w[ext_set.position(a).expect("member present")] = *c;
    }
    Ok((comp.with_terms(ext_set, w)?, cands))
}

/// Largest |gradient|; ties go to the earliest candidate (callers pass
/// candidates in lexicographic order).
fn select(cands: &[(usize, MultiIndex, f64)]) -> Option<(usize, MultiIndex)> {
    let mut best: Option<&(usize, MultiIndex, f64)> = None;
    for c in cands {
        if best.is_none_or(|b| c.2.abs() > b.2.abs()) {
            best = Some(c);
        }
    }
    best.map(|b| (b.0, b.1.clone()))
}

fn add_term(comp: &MapComponent, alpha: MultiIndex) -> Result<MapComponent> {
    let set = comp.index_set().add_index(alpha)?;
    let mut w = vec![0.0; set.len()];
    for (a, c) in comp.index_set().iter().zip(comp.coeffs()) {
        w[set.position(a).expect("member present")] = *c;
    }
    comp.with_terms(set, w)
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn pick(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

fn check_rows(rows: &[Vec<f64>], dim: usize) -> Result<()> {
    if rows.len() < 10 {
        return Err(Error::TooFewSamples {
            min: 10,
            got: rows.len(),
        });
    }
    for r in rows {
        check_dim(dim, r.len())?;
        check_finite(r)?;
    }
    Ok(())
}

fn minimize_component<F>(comp: &MapComponent, cfg: &AtmConfig, mut obj: F) -> Result<(MapComponent, f64)>
where
    F: FnMut(&MapComponent, Option<&mut [f64]>) -> Result<f64>,
{
    let mut work = comp.clone();
    let (w, rep) = minimize(
        |w, g| {
            work.set_coeffs(w)?;
            obj(&work, Some(g))
        },
        comp.coeffs(),
        cfg.minimize_options(),
    )?;
    if rep.line_search_failed {
        log::warn!("optimizer stopped early (line search) at value {}", rep.value);
    }
    let mut out = comp.clone();
    out.set_coeffs(&w)?;
    Ok((out, rep.value))
}

/// Trains the components `offset+1..=d` of a pullback map from samples.
///
/// Each component is trained independently on standardized data. After
/// every addition the held-out objective is checked; training stops once it
/// fails to improve by more than `min_improvement` for `patience`
/// consecutive additions, and the best held-out iterate is returned.
pub fn fit_from_samples(
    samples: &[Vec<f64>],
    offset: usize,
    cfg: &AtmConfig,
    seed: u64,
) -> Result<SampleFit> {
    cfg.validate()?;
    let dim = samples.first().map_or(0, Vec::len);
    if dim == 0 || offset >= dim {
        return Err(Error::invalid("sample rows must have more than `offset` columns"));
    }
    check_rows(samples, dim)?;
    let st = Standardization::from_samples(samples)?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|r| st.apply(r)).collect();
    let (tr, va) = split(rows.len(), cfg.validation_fraction, seed);
    let train = pick(&rows, &tr);
    let val = pick(&rows, &va);

    let start = cost::current();
    let mut trace = Vec::new();
    let mut comps = Vec::with_capacity(dim - offset);
    for k in offset + 1..=dim {
        let c = atm_samples_component(k, &train, &val, cfg, start, &mut trace)?;
        comps.push(c);
    }
    let map = TriangularMap::new(dim, offset, st, comps, Direction::Pullback)?;
    Ok(SampleFit { map, trace })
}

fn atm_samples_component(
    k: usize,
    train: &[Vec<f64>],
    val: &[Vec<f64>],
    cfg: &AtmConfig,
    start: u64,
    trace: &mut Vec<TraceRow>,
) -> Result<MapComponent> {
    let mut comp = MapComponent::identity(k, cfg.family, cfg.quad_order)?;
    let mut selected = String::new();
    let mut best: Option<(f64, MapComponent)> = None;
    let mut fails = 0;
    for iteration in 0.. {
        let (c, f_train) = minimize_component(&comp, cfg, |c, g| objective::from_samples(c, train, g))?;
        comp = c;
        let f_val = objective::from_samples(&comp, val, None)?;
        trace.push(TraceRow {
            component: k,
            iteration,
            selected: std::mem::take(&mut selected),
            n_terms: comp.n_terms(),
            train_objective: f_train,
            validation: Some(f_val),
            variance_diag: None,
            trace_diag: None,
            basis_evals: cost::current() - start,
        });
        match &best {
            Some((b, _)) if f_val >= b - cfg.min_improvement => {
                fails += 1;
                if fails >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((f_val, comp.clone()));
                fails = 0;
            }
        }
        if comp.n_terms() >= cfg.max_terms {
            break;
        }
        let grads = candidate_gradients(&comp, &cfg.caps, |c, g| objective::from_samples(c, train, Some(g)))?;
        let cands: Vec<_> = grads.into_iter().map(|(a, g)| (k, a, g)).collect();
        let Some((_, alpha)) = select(&cands) else {
            break;
        };
        selected = alpha.to_string();
        comp = add_term(&comp, alpha)?;
    }
    Ok(best.expect("at least one iteration").1)
}

/// Fits a forward map `T` with `T_k(x_{1:k}) ≈ outputs_k` by least squares,
/// component by component. Inputs are used as given (no standardization).
/// A component is accepted once its held-out mean-squared residual divided
/// by the output variance falls below `regression_tol`.
pub fn fit_regression(
    inputs: &[Vec<f64>],
    outputs: &[Vec<f64>],
    cfg: &AtmConfig,
    seed: u64,
) -> Result<RegressionFit> {
    cfg.validate()?;
    check_dim(inputs.len(), outputs.len())?;
    let dim = inputs.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::invalid("empty regression inputs"));
    }
    check_rows(inputs, dim)?;
    check_rows(outputs, dim)?;
    let (tr, va) = split(inputs.len(), cfg.validation_fraction, seed);
    let train = pick(inputs, &tr);
    let val = pick(inputs, &va);
    let start = cost::current();
    let mut trace = Vec::new();
    let mut comps = Vec::with_capacity(dim);
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut converged = true;
    for k in 1..=dim {
        let z_train: Vec<f64> = tr.iter().map(|&i| outputs[i][k - 1]).collect();
        let z_val: Vec<f64> = va.iter().map(|&i| outputs[i][k - 1]).collect();
        // residuals are judged relative to the output spread
        let var = stats::variance(&z_train);
        let norm = if var > 0.0 { var } else { 1.0 };
        let mut comp = affine_start(k, &train, &z_train, cfg)?;
        let mut selected = String::new();
        let mut mse = f64::INFINITY;
        for iteration in 0.. {
            let (c, f_train) =
                minimize_component(&comp, cfg, |c, g| objective::regression(c, &train, &z_train, g))?;
            comp = c;
            mse = 2.0 * objective::regression(&comp, &val, &z_val, None)? / val.len() as f64;
            trace.push(TraceRow {
                component: k,
                iteration,
                selected: std::mem::take(&mut selected),
                n_terms: comp.n_terms(),
                train_objective: f_train,
                validation: Some(mse),
                variance_diag: None,
                trace_diag: None,
                basis_evals: cost::current() - start,
            });
            if mse / norm < cfg.regression_tol {
                break;
            }
            if comp.n_terms() >= cfg.max_terms {
                converged = false;
                break;
            }
            let grads = candidate_gradients(&comp, &cfg.caps, |c, g| {
                objective::regression(c, &train, &z_train, Some(g))
            })?;
            let cands: Vec<_> = grads.into_iter().map(|(a, g)| (k, a, g)).collect();
            let Some((_, alpha)) = select(&cands) else {
                converged = false;
                break;
            };
            selected = alpha.to_string();
            comp = add_term(&comp, alpha)?;
        }
        worst = worst.max(mse);
        worst_rel = worst_rel.max(mse / norm);
        comps.push(comp);
    }
    let map = TriangularMap::new(
        dim,
        0,
        Standardization::identity(dim),
        comps,
        Direction::Forward,
    )?;
    Ok(RegressionFit {
        map,
        trace,
        mse: worst,
        relative_mse: worst_rel,
        converged,
    })
}

/// Component `k` set to the least-squares line of `z` on `x_k`, or the
/// identity when that line is not increasing.
fn affine_start(k: usize, x: &[Vec<f64>], z: &[f64], cfg: &AtmConfig) -> Result<MapComponent> {
    let mut comp = MapComponent::identity(k, cfg.family, cfg.quad_order)?;
    let xk: Vec<f64> = x.iter().map(|r| r[k - 1]).collect();
    let (mx, mz) = (stats::mean(&xk), stats::mean(z));
    let sxz: f64 = xk.iter().zip(z).map(|(a, b)| (a - mx) * (b - mz)).sum();
    let sxx: f64 = xk.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxz / sxx;
    if slope > 0.0 && slope.is_finite() {
        comp.set_coeffs(&[mz - slope * mx, softplus::inverse(slope)])?;
    }
    Ok(comp)
}

/// Standard normal samples, one stream per purpose.
pub(crate) fn reference_samples(dim: usize, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Antithetic standard normal samples, centered and whitened so that their
/// empirical mean is zero and covariance the identity. Affine parts of a
/// map fitted on them carry no sampling error for Gaussian targets.
pub(crate) fn matched_reference_samples(dim: usize, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let half = reference_samples(dim, n.div_ceil(2), seed, stream);
    let mut rows: Vec<Vec<f64>> = half
        .iter()
        .flat_map(|r| [r.clone(), r.iter().map(|v| -v).collect()])
        .take(n)
        .collect();
    let nf = n as f64;
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for r in &mut rows {
        for j in 0..dim {
            r[j] -= mean[j];
        }
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += r[i] * r[j] / nf;
            }
        }
    }
    cov.fill_upper_triangle_with_lower_triangle();
    let Some(chol) = cov.cholesky() else {
        return rows;
    };
    let l = chol.l();
    for r in &mut rows {
        // forward substitution r ← L⁻¹ r
        for i in 0..dim {
            let s: f64 = (0..i).map(|j| l[(i, j)] * r[j]).sum();
            r[i] = (r[i] - s) / l[(i, i)];
        }
    }
    rows
}

/// Trains a forward map `T` with `T_♯ρ ≈ π̄/∫π̄` by minimizing the
/// reverse-KL objective over `n_reference` reference samples.
///
/// All components share one index-set adaptation loop: at each iteration
/// the candidate with the largest objective gradient over the union of the
/// components' reduced margins is added. Training stops once both
/// diagnostics on `n_test` fresh samples fall below tolerance, or at the
/// term budget.
pub fn fit_from_density(
    target: &dyn LogDensity,
    cfg: &AtmConfig,
    seed: u64,
) -> Result<DensityFit> {
    let init = TriangularMap::identity(target.dim(), cfg.family, cfg.quad_order)?;
    fit_from_density_with(target, init, cfg, seed)
}

/// [`fit_from_density`] starting from `init` (a full forward map whose
/// index sets and coefficients seed the adaptation).
pub fn fit_from_density_with(
    target: &dyn LogDensity,
    init: TriangularMap,
    cfg: &AtmConfig,
    seed: u64,
) -> Result<DensityFit> {
    cfg.validate()?;
    let dim = target.dim();
    check_dim(dim, init.dim())?;
    if !init.is_full() || init.direction() != Direction::Forward {
        return Err(Error::invalid("initial map must be a full forward map"));
    }
    let reference = matched_reference_samples(dim, cfg.n_reference, seed, 0);
    let test = reference_samples(dim, cfg.n_test, seed, 1);
    let mut map = init;
    let start = cost::current();
    let mut trace = Vec::new();
    let mut selected = String::new();
    let mut diag = DiagnosticsReport::default();
    let mut converged = false;
    for iteration in 0.. {
        let mut work = map.clone();
        let (w, rep) = minimize(
            |w, g| {
                work.set_coeffs(w)?;
                objective::from_density(&work, target, &reference, Some(g))
            },
            &map.coeffs(),
            cfg.minimize_options(),
        )?;
        if rep.line_search_failed {
            log::warn!("optimizer stopped early (line search) at value {}", rep.value);
        }
        map.set_coeffs(&w)?;
        diag = map_diagnostics(&map, target, &test)?;
        trace.push(TraceRow {
            component: 0,
            iteration,
            selected: std::mem::take(&mut selected),
            n_terms: map.n_terms(),
            train_objective: rep.value,
            validation: None,
            variance_diag: Some(diag.variance),
            trace_diag: Some(diag.trace),
            basis_evals: cost::current() - start,
        });
        if diag.within(cfg.tol_variance, cfg.tol_trace) {
            converged = true;
            break;
        }
        if map.n_terms() >= cfg.max_terms {
            break;
        }

        // gradient over every component extended by its margin
        let mut ext = Vec::with_capacity(dim);
        let mut cand_lists = Vec::with_capacity(dim);
        for c in map.components() {
            let (e, cands) = extend_with_margin(c, &cfg.caps)?;
            ext.push(e);
            cand_lists.push(cands);
        }
        let ext_map = TriangularMap::new(
            dim,
            0,
            map.standardization().clone(),
            ext,
            Direction::Forward,
        )?;
        let mut g = vec![0.0; ext_map.n_terms()];
        objective::from_density(&ext_map, target, &reference, Some(&mut g))?;
        let mut cands = Vec::new();
        let mut at = 0;
        for (k, (c, list)) in ext_map.components().iter().zip(&cand_lists).enumerate() {
            for a in list {
                let p = c.index_set().position(a).expect("candidate present");
                cands.push((k, a.clone(), g[at + p]));
            }
            at += c.n_terms();
        }
        let Some((k, alpha)) = select(&cands) else {
            break;
        };
        selected = format!("{}:{}", k + 1, alpha);
        let new_comp = add_term(&map.components()[k], alpha)?;
        map.components_mut()[k] = new_comp;
    }
    Ok(DensityFit {
        map,
        trace,
        diagnostics: diag,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;
    use crate::polybasis::BasisFamily;

    fn cfg() -> AtmConfig {
        AtmConfig {
            n_reference: 2000,
            n_test: 2000,
            ..AtmConfig::default()
        }
    }

    fn normal_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        reference_samples(d, n, seed, 7)
    }

    #[test]
    fn standard_normal_data_stays_affine() {
        let rows = normal_rows(4000, 1, 1);
        let fit = fit_from_samples(&rows, 0, &cfg(), 3).unwrap();
        let c = &fit.map.components()[0];
        assert_eq!(c.n_terms(), 2, "{:?}", fit.trace);
        // the last two additions were rejected
        assert_eq!(fit.trace.len(), 3);
    }

    #[test]
    fn scaled_gaussian_recovers_affine_map() {
        let g = Gaussian::diagonal(vec![2.0], &[0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..5000).map(|_| g.sample(&mut rng)).collect();
        let fit = fit_from_samples(&rows, 0, &cfg(), 3).unwrap();
        assert!(fit.map.components()[0].n_terms() <= 3);
        for x in [1.5, 2.0, 2.6] {
            let s = fit.map.evaluate(&[x]).unwrap()[0];
            assert!((s - (x - 2.0) / 0.25).abs() < 0.1, "{x}: {s}");
        }
    }

    #[test]
    fn training_objective_is_non_increasing() {
        // skewed data forces several additions
        let rows: Vec<Vec<f64>> = normal_rows(3000, 1, 2)
            .into_iter()
            .map(|r| vec![r[0] + 0.3 * r[0] * r[0]])
            .collect();
        let fit = fit_from_samples(&rows, 0, &cfg(), 1).unwrap();
        assert!(fit.trace.len() >= 2);
        for w in fit.trace.windows(2) {
            assert!(w[1].train_objective <= w[0].train_objective + 1e-12);
        }
    }

    #[test]
    fn regression_onto_identity_pairs() {
        let x = normal_rows(200, 2, 3);
        let fit = fit_regression(&x, &x, &cfg(), 0).unwrap();
        assert!(fit.converged && fit.mse < 1e-12);
        assert_eq!(fit.map.n_terms(), 4);
    }

    #[test]
    fn regression_onto_affine_pairs() {
        let x = normal_rows(200, 1, 4);
        let z: Vec<Vec<f64>> = x.iter().map(|r| vec![1.0 + 2.0 * r[0]]).collect();
        let fit = fit_regression(&x, &z, &cfg(), 0).unwrap();
        assert!(fit.converged && fit.mse < 1e-8, "{}", fit.mse);
    }

    #[test]
    fn density_fit_of_shifted_gaussian() {
        let target = Gaussian::diagonal(vec![0.7], &[1.0]).unwrap();
        let fit = fit_from_density(&target, &cfg(), 11).unwrap();
        assert!(fit.converged);
        assert!((fit.map.evaluate(&[0.0]).unwrap()[0] - 0.7).abs() < 1e-2);
    }

    #[test]
    fn density_fit_of_correlated_gaussian() {
        let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.3, 1.2]);
        let target = Gaussian::new(vec![2.0, -1.0], cov).unwrap();
        let fit = fit_from_density(&target, &cfg(), 12).unwrap();
        assert!(fit.converged, "{:?}", fit.diagnostics);
        let z = fit.map.evaluate(&[0.0, 0.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 0.02 && (z[1] + 1.0).abs() < 0.02, "{z:?}");
    }

    #[test]
    fn matched_samples_have_exact_moments() {
        let r = matched_reference_samples(3, 501, 2, 0);
        for i in 0..3 {
            let m: f64 = r.iter().map(|x| x[i]).sum::<f64>() / 501.0;
            assert!(m.abs() < 1e-12);
            for j in 0..3 {
                let c: f64 = r.iter().map(|x| x[i] * x[j]).sum::<f64>() / 501.0;
                assert!((c - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn density_fit_from_initial_map() {
        let target = Gaussian::diagonal(vec![40.0], &[0.01]).unwrap();
        let init = TriangularMap::diagonal_affine(&[39.9], &[0.02], BasisFamily::default(), 32).unwrap();
        let fit = fit_from_density_with(&target, init, &cfg(), 1).unwrap();
        assert!(fit.converged);
        assert!((fit.map.evaluate(&[1.0]).unwrap()[0] - 40.01).abs() < 1e-6);
    }

    #[test]
    fn ties_go_to_first_candidate() {
        let c = vec![
            (0, MultiIndex::new(vec![0, 2]), 1.0),
            (0, MultiIndex::new(vec![1, 0]), -1.0),
        ];
        assert_eq!(select(&c).unwrap().1, MultiIndex::new(vec![0, 2]));
    }
}
