//! Exposure importance: the share of the mixture-effect variance lost when an
//! exposure (or a group of exposures) is averaged out given the others.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::model::ModelKind;
use crate::posterior::{summarize_values, ScalarSummary};
use crate::sampler::{ChainOutput, ParamState};

/// Number of neighbours averaged when every kernel weight underflows.
const NN_FALLBACK: usize = 5;
const HERMITE_NODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's multivariate rule per conditioning dimension.
    Silverman,
    /// The same bandwidth in every dimension.
    Fixed(f64),
}

/// Caller-supplied regression of each exposure on the others: fitted
/// conditional means at the observations (n x P). The conditional law is
/// taken as Gaussian around them with the residual spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginFit {
    pub predictions: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionalModel {
    Kernel { bandwidth: Bandwidth },
    RegressionPlugin(PluginFit),
}

impl Default for ConditionalModel {
    fn default() -> Self {
        ConditionalModel::Kernel { bandwidth: Bandwidth::Silverman }
    }
}

impl ConditionalModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConditionalModel::Kernel { bandwidth: Bandwidth::Fixed(h) } if !(*h > 0.0 && h.is_finite()) => {
                arg_err(format!("bandwidth must be positive, got {h}"))
            }
            _ => Ok(()),
        }
    }
}

/// A mixture-response function of the exposure vector.
pub enum Surface<'a> {
    /// sum_j g_j(x' w_j): evaluated in O(|group|) per swapped coordinate.
    Index { weights: Vec<DVector<f64>>, curves: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> },
    General(Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>),
}

impl Surface<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Surface::Index { weights, curves } => weights
                .iter()
                .zip(curves)
                .map(|(w, g)| g(w.iter().zip(x).map(|(a, b)| a * b).sum()))
                .sum(),
            Surface::General(f) => f(x),
        }
    }

    fn dim_ok(&self, p: usize) -> bool {
        match self {
            Surface::Index { weights, curves } => weights.len() == curves.len() && weights.iter().all(|w| w.len() == p),
            Surface::General(_) => true,
        }
    }
}

/// Values f(x with the group coordinates taken from donor i and the rest
/// from query q), organised for repeated evaluation.
struct Swapper<'s, 'a> {
    surface: &'s Surface<'a>,
    x: &'s DMatrix<f64>,
    queries: &'s DMatrix<f64>,
    group: &'s [usize],
    /// index models: full index values of queries and the group part of
    /// queries and donors (rows, J)
    q_full: DMatrix<f64>,
    q_part: DMatrix<f64>,
    d_part: DMatrix<f64>,
}

impl<'s, 'a> Swapper<'s, 'a> {
    fn new(surface: &'s Surface<'a>, x: &'s DMatrix<f64>, queries: &'s DMatrix<f64>, group: &'s [usize]) -> Self {
        let (q_full, q_part, d_part) = match surface {
            Surface::Index { weights, .. } => {
                let j = weights.len();
                let part = |m: &DMatrix<f64>| {
                    DMatrix::from_fn(m.nrows(), j, |r, c| group.iter().map(|&p| m[(r, p)] * weights[c][p]).sum())
                };
                let full = DMatrix::from_fn(queries.nrows(), j, |r, c| {
                    (0..queries.ncols()).map(|p| queries[(r, p)] * weights[c][p]).sum()
                });
                (full, part(queries), part(x))
            }
            Surface::General(_) => (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)),
        };
        Swapper { surface, x, queries, group, q_full, q_part, d_part }
    }

    fn value(&self, q: usize, i: usize, buf: &mut Vec<f64>) -> f64 {
        match self.surface {
            Surface::Index { curves, .. } => curves
                .iter()
                .enumerate()
                .map(|(c, g)| g(self.q_full[(q, c)] - self.q_part[(q, c)] + self.d_part[(i, c)]))
                .sum(),
            Surface::General(f) => {
                buf.clear();
                buf.extend(self.queries.row(q).iter());
                for &p in self.group {
                    buf[p] = self.x[(i, p)];
                }
                f(buf)
            }
        }
    }
}

fn complement(p_total: usize, group: &[usize]) -> Result<Vec<usize>> {
    if group.is_empty() {
        return arg_err("exposure group is empty");
    }
    if let Some(g) = group.iter().find(|g| **g >= p_total) {
        return arg_err(format!("exposure index {g} out of range (P = {p_total})"));
    }
    let rest: Vec<usize> = (0..p_total).filter(|p| !group.contains(p)).collect();
    if rest.is_empty() {
        return arg_err("group covers every exposure; its complement is empty");
    }
    Ok(rest)
}

/// Per-dimension Silverman bandwidths over the listed columns.
pub fn silverman_bandwidths(x: &DMatrix<f64>, cols: &[usize]) -> Vec<f64> {
    let n = x.nrows() as f64;
    let d = cols.len() as f64;
    let factor = (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0));
    cols.iter()
        .map(|&c| {
            let col = x.column(c);
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let h = sd * factor;
            if h > 0.0 {
                h
            } else {
                1.0
            }
        })
        .collect()
}

/// Normalized kernel weights of every donor for every query (rows sum to one).
pub struct KernelWeights {
    /// queries x donors
    pub weights: DMatrix<f64>,
    pub fallbacks: usize,
}

pub fn kernel_weights(
    x: &DMatrix<f64>,
    queries: &DMatrix<f64>,
    cond_cols: &[usize],
    bandwidth: Bandwidth,
) -> Result<KernelWeights> {
    let n = x.nrows();
    if n == 0 {
        return dim_err("no observations");
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidths(x, cond_cols),
        Bandwidth::Fixed(b) => vec![b; cond_cols.len()],
    };
    let mut w = DMatrix::zeros(queries.nrows(), n);
    let mut fallbacks = 0;
    for q in 0..queries.nrows() {
        let mut total = 0.0;
        let mut dist = Vec::with_capacity(n);
        for i in 0..n {
            let d2: f64 = cond_cols
                .iter()
                .zip(&h)
                .map(|(&c, hc)| {
                    let z = (x[(i, c)] - queries[(q, c)]) / hc;
                    z * z
                })
                .sum();
            let k = (-0.5 * d2).exp();
            w[(q, i)] = k;
            total += k;
            dist.push(d2);
        }
        if total > 0.0 && total.is_finite() {
            for i in 0..n {
                w[(q, i)] /= total;
            }
        } else {
            fallbacks += 1;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b)));
            let take = NN_FALLBACK.min(n);
            for i in 0..n {
                w[(q, i)] = 0.0;
            }
            for &i in &order[..take] {
                w[(q, i)] = 1.0 / take as f64;
            }
        }
    }
    if fallbacks > 0 {
        log::warn!("kernel weights underflowed for {fallbacks} queries; used the {NN_FALLBACK} nearest neighbours");
    }
    Ok(KernelWeights { weights: w, fallbacks })
}

/// Nadaraya-Watson estimate of E[f(x_G, x_-G) | x_-G] at each query row
/// (only the complement coordinates of a query matter).
pub fn kernel_conditional_mean(
    surface: &Surface,
    x: &DMatrix<f64>,
    group: &[usize],
    queries: &DMatrix<f64>,
    bandwidth: Bandwidth,
) -> Result<Vec<f64>> {
    let rest = complement(x.ncols(), group)?;
    if queries.ncols() != x.ncols() || !surface.dim_ok(x.ncols()) {
        return dim_err("query, data and surface dimensions differ");
    }
    let kw = kernel_weights(x, queries, &rest, bandwidth)?;
    Ok(weighted_means(surface, x, queries, group, &kw.weights))
}

fn weighted_means(
    surface: &Surface,
    x: &DMatrix<f64>,
    queries: &DMatrix<f64>,
    group: &[usize],
    w: &DMatrix<f64>,
) -> Vec<f64> {
    let sw = Swapper::new(surface, x, queries, group);
    let mut buf = Vec::with_capacity(x.ncols());
    (0..queries.nrows())
        .map(|q| {
            let mut s = 0.0;
            for i in 0..x.nrows() {
                let wi = w[(q, i)];
                if wi != 0.0 {
                    s += wi * sw.value(q, i, &mut buf);
                }
            }
            s
        })
        .collect()
}

/// Gauss-Hermite nodes and weights for the standard normal law.
fn normal_quadrature(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { ((i.max(j)) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(off);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)] * eig.eigenvectors[(0, k)])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn plugin_means(surface: &Surface, x: &DMatrix<f64>, p: usize, fit: &PluginFit) -> Result<Vec<f64>> {
    let n = x.nrows();
    if fit.predictions.shape() != x.shape() {
        return dim_err("plugin predictions must have the shape of the exposure matrix");
    }
    let resid: Vec<f64> = (0..n).map(|i| x[(i, p)] - fit.predictions[(i, p)]).collect();
    let sd = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let (nodes, weights) = normal_quadrature(HERMITE_NODES);
    let mut buf = vec![0.0; x.ncols()];
    Ok((0..n)
        .map(|q| {
            buf.iter_mut().zip(x.row(q).iter()).for_each(|(b, v)| *b = *v);
            nodes
                .iter()
                .zip(&weights)
                .map(|(z, w)| {
                    buf[p] = fit.predictions[(q, p)] + sd * z;
                    w * surface.eval(&buf)
                })
                .sum()
        })
        .collect())
}

/// One importance value with the estimate before clipping to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceValue {
    pub phi: f64,
    pub pre_clip: f64,
}

fn biased_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn finish(f: &[f64], cond: &[f64]) -> Option<ImportanceValue> {
    let total = biased_variance(f);
    if !(total > 0.0) {
        return None;
    }
    let pre = 1.0 - biased_variance(cond) / total;
    let phi = pre.clamp(0.0, 1.0);
    if phi != pre {
        log::debug!("importance estimate {pre} clipped to {phi}");
    }
    Some(ImportanceValue { phi, pre_clip: pre })
}

/// Importance of a group of exposures for one surface over the empirical
/// exposure distribution. `None` when the surface is constant on the data.
pub fn group_importance(
    surface: &Surface,
    x: &DMatrix<f64>,
    group: &[usize],
    cond: &ConditionalModel,
) -> Result<Option<ImportanceValue>> {
    cond.validate()?;
    complement(x.ncols(), group)?;
    if !surface.dim_ok(x.ncols()) {
        return dim_err("surface dimension differs from the exposure matrix");
    }
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let f: Vec<f64> = rows.iter().map(|r| surface.eval(r)).collect();
    let cmean = match cond {
        ConditionalModel::Kernel { bandwidth } => kernel_conditional_mean(surface, x, group, x, *bandwidth)?,
        ConditionalModel::RegressionPlugin(fit) => {
            if group.len() != 1 {
                return arg_err("the regression plugin handles single exposures only");
            }
            plugin_means(surface, x, group[0], fit)?
        }
    };
    Ok(finish(&f, &cmean))
}

pub fn exposure_importance(
    surface: &Surface,
    x: &DMatrix<f64>,
    p: usize,
    cond: &ConditionalModel,
) -> Result<Option<ImportanceValue>> {
    group_importance(surface, x, &[p], cond)
}

/// Mixture surface sum_j f_kj of one draw as a function of the raw exposure
/// vector.
pub fn draw_surface<'a>(chain: &'a ChainOutput, state: &'a ParamState, k: usize) -> Surface<'a> {
    let model = &chain.model;
    let spec = &model.spec;
    if model.is_tensor() {
        return Surface::General(Box::new(move |x: &[f64]| {
            (0..spec.n_indices).map(|j| model.pair_effect(state, k, j, x).unwrap_or(f64::NAN)).sum()
        }));
    }
    let mut weights = Vec::with_capacity(spec.n_indices);
    let mut curves: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>> = Vec::with_capacity(spec.n_indices);
    for j in 0..spec.n_indices {
        let theta = if spec.model_kind == ModelKind::Additive {
            DVector::from_element(1, 1.0)
        } else {
            state.theta_atom(k, j).clone()
        };
        let t = match &spec.reduction_basis {
            Some(psi) => psi * theta,
            None => theta,
        };
        weights.push(spec.index_designs[j].transpose() * t);
        let gamma = model.basis.raw_coefficients(state.beta_atom(k, j));
        let basis = &model.basis.basis;
        curves.push(Box::new(move |v: f64| basis.value(gamma.as_slice(), v)));
    }
    Surface::Index { weights, curves }
}

/// Posterior summary of one importance metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub outcome: usize,
    pub label: String,
    pub group: Vec<usize>,
    pub summary: Option<ScalarSummary>,
    /// Draws whose estimate fell outside [0, 1] before clipping.
    pub excursions: usize,
    /// Draws with a constant surface (excluded).
    pub missing: usize,
}

/// Importance of each group for outcome k, computed per draw and then
/// summarized. Kernel weights are shared across draws.
pub fn importance_from_chain(
    chain: &ChainOutput,
    x: &DMatrix<f64>,
    k: usize,
    groups: &[(String, Vec<usize>)],
    cond: &ConditionalModel,
) -> Result<Vec<ImportanceSummary>> {
    if chain.draws.is_empty() {
        return Err(Error::NoDraws("chain has no draws".into()));
    }
    cond.validate()?;
    if k >= chain.model.spec.n_outcomes {
        return arg_err(format!("outcome {k} out of range"));
    }
    if x.ncols() != chain.model.spec.exposure_dim {
        return dim_err("exposure matrix does not match the fitted model");
    }
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    groups
        .iter()
        .map(|(label, group)| {
            let rest = complement(x.ncols(), group)?;
            let kw = match cond {
                ConditionalModel::Kernel { bandwidth } => Some(kernel_weights(x, x, &rest, *bandwidth)?),
                ConditionalModel::RegressionPlugin(_) => {
                    if group.len() != 1 {
                        return arg_err("the regression plugin handles single exposures only");
                    }
                    None
                }
            };
            let values: Vec<Option<ImportanceValue>> = chain
                .draws
                .par_iter()
                .map(|s| {
                    let surface = draw_surface(chain, s, k);
                    let f: Vec<f64> = rows.iter().map(|r| surface.eval(r)).collect();
                    let cmean = match (&kw, cond) {
                        (Some(kw), _) => weighted_means(&surface, x, x, group, &kw.weights),
                        (None, ConditionalModel::RegressionPlugin(fit)) => plugin_means(&surface, x, group[0], fit)?,
                        _ => unreachable!(),
                    };
                    Ok(finish(&f, &cmean))
                })
                .collect::<Result<_>>()?;
            let ok: Vec<ImportanceValue> = values.iter().flatten().copied().collect();
            let excursions = ok.iter().filter(|v| v.phi != v.pre_clip).count();
            if excursions > 0 {
                log::info!("{label}: {excursions} draws clipped to [0, 1]");
            }
            let phis: Vec<f64> = ok.iter().map(|v| v.phi).collect();
            Ok(ImportanceSummary {
                outcome: k,
                label: label.clone(),
                group: group.clone(),
                summary: if phis.is_empty() { None } else { Some(summarize_values(&phis)?) },
                excursions,
                missing: values.len() - ok.len(),
            })
        })
        .collect()
}
