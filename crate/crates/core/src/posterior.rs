//! Summaries of a finished chain: exposure-response curves, lag-weight
//! profiles, mixture effects, lagged contrasts, clustering heatmaps and WAIC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{logsumexp, quantile_sorted};
use crate::model::{compute_index_inputs, exposure_blocks, ModelKind};
use crate::sampler::{ChainOutput, ParamState};

/// Pointwise posterior mean with an equal-tailed 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and 2.5%/97.5% quantiles. The interval is widened to contain the
/// mean when a very skewed sample puts the mean outside it.
pub fn summarize_values(values: &[f64]) -> Result<ScalarSummary> {
    if values.is_empty() {
        return Err(Error::NoDraws("no draws to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lower = quantile_sorted(&sorted, 0.025).min(mean);
    let upper = quantile_sorted(&sorted, 0.975).max(mean);
    Ok(ScalarSummary { mean, lower, upper })
}

impl CurveSummary {
    /// `draws[s][g]` is the value of draw s at grid point g.
    pub fn from_draws(grid: Vec<f64>, draws: &[Vec<f64>]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::NoDraws("no draws to summarize".into()));
        }
        let g = grid.len();
        if draws.iter().any(|d| d.len() != g) {
            return dim_err("draw length differs from grid length");
        }
        let mut mean = Vec::with_capacity(g);
        let mut lower = Vec::with_capacity(g);
        let mut upper = Vec::with_capacity(g);
        let mut column = vec![0.0; draws.len()];
        for i in 0..g {
            for (c, d) in column.iter_mut().zip(draws) {
                *c = d[i];
            }
            let s = summarize_values(&column)?;
            mean.push(s.mean);
            lower.push(s.lower);
            upper.push(s.upper);
        }
        Ok(CurveSummary { grid, mean, lower, upper })
    }

    pub fn is_ordered(&self) -> bool {
        self.lower.iter().zip(&self.mean).zip(&self.upper).all(|((l, m), u)| l <= m && m <= u)
    }
}

fn require_draws(chain: &ChainOutput) -> Result<()> {
    if chain.draws.is_empty() {
        return Err(Error::NoDraws("chain has no draws".into()));
    }
    Ok(())
}

fn check_pair(chain: &ChainOutput, k: usize, j: usize) -> Result<()> {
    let spec = &chain.model.spec;
    if k >= spec.n_outcomes || j >= spec.n_indices {
        return arg_err(format!("pair ({k}, {j}) is outside K={} J={}", spec.n_outcomes, spec.n_indices));
    }
    Ok(())
}

/// Flip each draw so that the coordinate with the largest posterior-mean
/// magnitude is nonnegative.
pub fn align_signs(draws: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let Some(first) = draws.first() else { return vec![] };
    let mut mean = DVector::zeros(first.len());
    for d in draws {
        mean += d;
    }
    if mean.iter().all(|v| *v == 0.0) {
        // antipodal split with an exactly zero mean: use the first draw
        mean = first.clone();
    }
    let pivot = mean.iamax();
    draws.iter().map(|d| if d[pivot] < 0.0 { -d } else { d.clone() }).collect()
}

/// Aligned lag-weight (or index-weight) draws of pair (k, j) and their
/// mean renormalized to unit length.
pub fn weight_profile_summary(chain: &ChainOutput, k: usize, j: usize) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    require_draws(chain)?;
    check_pair(chain, k, j)?;
    if !chain.model.spec.has_theta() {
        return arg_err("this model kind has no index weights");
    }
    let raw: Vec<DVector<f64>> = chain.draws.iter().map(|s| chain.model.weight_profile(s, k, j)).collect();
    let aligned = align_signs(&raw);
    let mut mean = DVector::zeros(aligned[0].len());
    for d in &aligned {
        mean += d;
    }
    let norm = mean.norm();
    if norm > 0.0 {
        mean /= norm;
    }
    Ok((mean, aligned))
}

/// Exposure-response curve of pair (k, j) over index values `grid`,
/// relative to the index value of the mean exposure vector.
pub fn erf_summary(chain: &ChainOutput, k: usize, j: usize, grid: &[f64]) -> Result<CurveSummary> {
    require_draws(chain)?;
    check_pair(chain, k, j)?;
    let model = &chain.model;
    let (lo, hi) = model.range();
    let tol = 1e-9 * (hi - lo);
    if let Some(g) = grid.iter().find(|g| !(**g >= lo - tol && **g <= hi + tol)) {
        return arg_err(format!("grid value {g} lies outside the basis range [{lo}, {hi}]"));
    }
    let xbar = model.exposure_mean.clone();
    let draws: Vec<Vec<f64>> = if let Some(t) = &model.tensor {
        let xj = &model.spec.index_designs[j] * DVector::from_column_slice(&xbar);
        let lags = xj.len();
        chain
            .draws
            .iter()
            .map(|s| {
                let b = s.beta_atom(k, j);
                let reference = t.value(b, xj.as_slice())?;
                grid.iter().map(|&g| Ok(t.value(b, &vec![g; lags])? - reference)).collect()
            })
            .collect::<Result<_>>()?
    } else {
        chain
            .draws
            .iter()
            .map(|s| {
                let v_ref = model.index_value(s, k, j, &xbar)?;
                let f_ref = model.curve_value(s, k, j, v_ref);
                Ok(grid.iter().map(|&g| model.curve_value(s, k, j, g) - f_ref).collect())
            })
            .collect::<Result<_>>()?
    };
    CurveSummary::from_draws(grid.to_vec(), &draws)
}

/// Per-column empirical quantile of an exposure matrix.
pub fn exposure_quantile_vector(xstar: &DMatrix<f64>, q: f64) -> Vec<f64> {
    xstar
        .column_iter()
        .map(|c| {
            let mut v: Vec<f64> = c.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            quantile_sorted(&v, q)
        })
        .collect()
}

/// Sum over indices of f_kj with every exposure at its q-quantile, minus the
/// same with every exposure at its median.
pub fn overall_mixture_effect(
    chain: &ChainOutput,
    xstar: &DMatrix<f64>,
    k: usize,
    quantiles: &[f64],
) -> Result<CurveSummary> {
    require_draws(chain)?;
    check_pair(chain, k, 0)?;
    if xstar.ncols() != chain.model.spec.exposure_dim || xstar.nrows() == 0 {
        return dim_err("exposure matrix does not match the fitted model");
    }
    if let Some(q) = quantiles.iter().find(|q| !(**q >= 0.0 && **q <= 1.0)) {
        return arg_err(format!("quantile {q} outside [0, 1]"));
    }
    let median = exposure_quantile_vector(xstar, 0.5);
    let points: Vec<Vec<f64>> = quantiles
        .iter()
        .map(|&q| if q == 0.5 { median.clone() } else { exposure_quantile_vector(xstar, q) })
        .collect();
    let total = |s: &ParamState, x: &[f64]| -> Result<f64> {
        (0..chain.model.spec.n_indices).map(|j| chain.model.pair_effect(s, k, j, x)).sum()
    };
    let draws: Vec<Vec<f64>> = chain
        .draws
        .iter()
        .map(|s| {
            let base = total(s, &median)?;
            points.iter().map(|x| Ok(total(s, x)? - base)).collect()
        })
        .collect::<Result<_>>()?;
    CurveSummary::from_draws(quantiles.to_vec(), &draws)
}

/// Effect on outcome k of moving exposure p at lag l from `lo` to `hi`
/// (defaults: mean -/+ one SD) with all other inputs at their means.
pub fn lagged_contrast(
    chain: &ChainOutput,
    k: usize,
    p: usize,
    l: usize,
    lo: Option<f64>,
    hi: Option<f64>,
) -> Result<ScalarSummary> {
    require_draws(chain)?;
    let spec = &chain.model.spec;
    if !matches!(spec.model_kind, ModelKind::Dlnm | ModelKind::NonseparableDlnm) {
        return arg_err("lagged contrasts need a distributed-lag model");
    }
    check_pair(chain, k, p)?;
    let lags = spec.index_dim();
    if l >= lags {
        return arg_err(format!("lag {l} outside 0..{lags}"));
    }
    let col = p * lags + l;
    let mean = chain.model.exposure_mean[col];
    let sd = chain.model.exposure_sd[col];
    let lo = lo.unwrap_or(mean - sd);
    let hi = hi.unwrap_or(mean + sd);
    let mut x_lo = chain.model.exposure_mean.clone();
    let mut x_hi = x_lo.clone();
    x_lo[col] = lo;
    x_hi[col] = hi;
    let values: Vec<f64> = chain
        .draws
        .iter()
        .map(|s| {
            if lo == hi {
                return Ok(0.0);
            }
            Ok(chain.model.pair_effect(s, k, p, &x_hi)? - chain.model.pair_effect(s, k, p, &x_lo)?)
        })
        .collect::<Result<_>>()?;
    summarize_values(&values)
}

/// Posterior probabilities that two (outcome, index) pairs share an atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterHeatmap {
    /// (k, j) of each row/column, outcome-major
    pub labels: Vec<(usize, usize)>,
    pub prob_beta: DMatrix<f64>,
    pub prob_theta: DMatrix<f64>,
}

pub fn pairwise_clustering(chain: &ChainOutput) -> Result<ClusterHeatmap> {
    require_draws(chain)?;
    let spec = &chain.model.spec;
    let labels: Vec<(usize, usize)> =
        (0..spec.n_outcomes).flat_map(|k| (0..spec.n_indices).map(move |j| (k, j))).collect();
    let n = labels.len();
    let mut pb = DMatrix::zeros(n, n);
    let mut pt = DMatrix::zeros(n, n);
    for s in &chain.draws {
        for (a, &(ka, ja)) in labels.iter().enumerate() {
            for (b, &(kb, jb)) in labels.iter().enumerate() {
                if s.cluster.z_beta.get(ka, ja) == s.cluster.z_beta.get(kb, jb) {
                    pb[(a, b)] += 1.0;
                }
                if s.cluster.z_theta.get(ka, ja) == s.cluster.z_theta.get(kb, jb) {
                    pt[(a, b)] += 1.0;
                }
            }
        }
    }
    let d = chain.draws.len() as f64;
    Ok(ClusterHeatmap { labels, prob_beta: pb / d, prob_theta: pt / d })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

/// WAIC from per-draw pointwise log densities (all matrices the same shape).
pub fn compute_waic(loglik: &[DMatrix<f64>]) -> Result<Waic> {
    if loglik.len() < 2 {
        return Err(Error::NoDraws("WAIC needs at least two draws".into()));
    }
    let shape = loglik[0].shape();
    if loglik.iter().any(|m| m.shape() != shape) {
        return dim_err("log-likelihood matrices differ in shape");
    }
    let s = loglik.len() as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut column = vec![0.0; loglik.len()];
    for idx in 0..shape.0 * shape.1 {
        for (c, m) in column.iter_mut().zip(loglik) {
            *c = m.as_slice()[idx];
        }
        lppd += logsumexp(&column) - s.ln();
        let mean = column.iter().sum::<f64>() / s;
        p_waic += column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s - 1.0);
    }
    Ok(Waic { waic: -2.0 * (lppd - p_waic), lppd, p_waic })
}

/// Posterior mean of the fitted mean surface beta0_k + sum_j f_kj(x) at
/// exposure vectors `points` (covariates at zero).
pub fn surface_mean(chain: &ChainOutput, k: usize, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    require_draws(chain)?;
    check_pair(chain, k, 0)?;
    let mut acc = vec![0.0; points.len()];
    for s in &chain.draws {
        for (a, x) in acc.iter_mut().zip(points) {
            let mut v = s.beta0[k];
            for j in 0..chain.model.spec.n_indices {
                v += chain.model.pair_effect(s, k, j, x)?;
            }
            *a += v;
        }
    }
    let d = chain.draws.len() as f64;
    Ok(acc.into_iter().map(|v| v / d).collect())
}

/// Posterior mean of f_kj at each row of `xstar`.
pub fn pair_effect_mean(chain: &ChainOutput, xstar: &DMatrix<f64>, k: usize, j: usize) -> Result<Vec<f64>> {
    require_draws(chain)?;
    check_pair(chain, k, j)?;
    let rows: Vec<Vec<f64>> = xstar.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut acc = vec![0.0; rows.len()];
    for s in &chain.draws {
        for (a, x) in acc.iter_mut().zip(&rows) {
            *a += chain.model.pair_effect(s, k, j, x)?;
        }
    }
    let d = chain.draws.len() as f64;
    Ok(acc.into_iter().map(|v| v / d).collect())
}

/// Values of f_kj at every row of `xstar`, one vector per draw.
pub fn pair_effect_draws(chain: &ChainOutput, xstar: &DMatrix<f64>, k: usize, j: usize) -> Result<Vec<Vec<f64>>> {
    require_draws(chain)?;
    check_pair(chain, k, j)?;
    let model = &chain.model;
    if let Some(t) = &model.tensor {
        let blocks = exposure_blocks(&model.spec, xstar)?;
        let mut design = DMatrix::zeros(blocks.n, t.dim());
        for i in 0..blocks.n {
            design.set_row(i, &t.design(blocks.row(i, j))?.transpose());
        }
        return Ok(chain.draws.iter().map(|s| (&design * s.beta_atom(k, j)).as_slice().to_vec()).collect());
    }
    let inputs = compute_index_inputs(&model.spec, xstar)?;
    let additive = model.spec.model_kind == ModelKind::Additive;
    Ok(chain
        .draws
        .iter()
        .map(|s| {
            let gamma = model.basis.raw_coefficients(s.beta_atom(k, j));
            let theta = if additive { None } else { Some(s.theta_atom(k, j).as_slice()) };
            (0..inputs.n)
                .map(|i| {
                    let v = match theta {
                        Some(t) => inputs.dot(i, j, t),
                        None => inputs.row(i, j)[0],
                    };
                    model.basis.basis.value(gamma.as_slice(), v)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waic_trivial_cases() {
        let zero = vec![DMatrix::zeros(3, 2); 2];
        let w = compute_waic(&zero).unwrap();
        assert_eq!((w.waic, w.lppd, w.p_waic), (0.0, 0.0, 0.0));
        let m = DMatrix::from_row_slice(2, 1, &[-1.5, -0.5]);
        let w = compute_waic(&[m.clone(), m.clone(), m]).unwrap();
        assert!(w.p_waic == 0.0 && (w.waic - 4.0).abs() < 1e-14);
        assert!(compute_waic(&[DMatrix::zeros(1, 1)]).is_err());
    }

    #[test]
    fn antipodal_draws_collapse() {
        let v = DVector::from_vec(vec![0.6, -0.8]);
        let draws: Vec<_> = (0..10).map(|i| if i % 2 == 0 { v.clone() } else { -&v }).collect();
        let aligned = align_signs(&draws);
        let mean = aligned.iter().fold(DVector::zeros(2), |a, d| a + d) / 10.0;
        assert!((mean.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_draws_unchanged_when_already_consistent() {
        let draws = vec![DVector::from_vec(vec![0.1, 0.9]), DVector::from_vec(vec![-0.2, 0.7])];
        assert_eq!(align_signs(&draws), draws);
    }

    #[test]
    fn skewed_sample_keeps_mean_inside_interval() {
        let mut v = vec![0.0; 39];
        v.push(1000.0);
        let s = summarize_values(&v).unwrap();
        assert!(s.lower <= s.mean && s.mean <= s.upper);
    }
}
