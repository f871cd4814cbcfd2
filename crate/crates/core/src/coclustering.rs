//! Truncated stick-breaking priors with coupled indicators for the spline
//! coefficients (beta side) and the index weights (theta side).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::linalg::logsumexp;

/// Upper clamp for stick fractions V_c with c < C.
pub const V_MAX: f64 = 1.0 - 1e-12;
const V_MIN: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Beta,
    Theta,
}

/// How indicators are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    /// Separate beta and theta indicators coupled through rho.
    Joint,
    /// Only beta indicators (fixed or absent index weights).
    BetaOnly,
    /// Indicators frozen at their initial values (no clustering).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMethod {
    #[default]
    Metropolis,
    Grid,
}

/// K x J table of 0-based cluster labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorTable {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<usize>,
}

impl IndicatorTable {
    pub fn new(rows: usize, cols: usize, fill: usize) -> Self {
        IndicatorTable { rows, cols, data: vec![fill; rows * cols] }
    }

    /// Pair (k, j) assigned to cluster (k * J + j) mod C.
    pub fn distinct(rows: usize, cols: usize, n_clusters: usize) -> Self {
        IndicatorTable { rows, cols, data: (0..rows * cols).map(|i| i % n_clusters).collect() }
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> usize {
        self.data[k * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, j: usize, c: usize) {
        self.data[k * self.cols + j] = c;
    }

    pub fn counts(&self, n_clusters: usize) -> Vec<usize> {
        let mut n = vec![0; n_clusters];
        for &c in &self.data {
            n[c] += 1;
        }
        n
    }

    /// Pairs (k, j) assigned to cluster `c`.
    pub fn members(&self, c: usize) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == c)
            .map(|(i, _)| (i / self.cols, i % self.cols))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub mode: IndicatorMode,
    pub z_beta: IndicatorTable,
    pub z_theta: IndicatorTable,
    pub v_beta: Vec<f64>,
    pub v_theta: Vec<f64>,
    /// log(1 - V_c) for c < C. V_c rounds to one in double precision when the
    /// concentration is small, so the complement is carried separately. Left
    /// empty, it is derived from the V's.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log1m_v_beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log1m_v_theta: Vec<f64>,
    pub alpha_beta: f64,
    pub alpha_theta: f64,
    pub rho: f64,
    pub beta_atoms: Vec<DVector<f64>>,
    pub theta_atoms: Vec<DVector<f64>>,
}

/// Hyperparameters used by the clustering updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterHyper {
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub rw_sd: f64,
    pub gridsize: usize,
    pub stick_method: UpdateMethod,
}

impl Default for ClusterHyper {
    fn default() -> Self {
        ClusterHyper {
            a_beta: 1.0,
            b_beta: 1.0,
            a_theta: 1.0,
            b_theta: 1.0,
            a_rho: 1.0,
            b_rho: 1.0,
            rw_sd: 1.0,
            gridsize: 10,
            stick_method: UpdateMethod::Metropolis,
        }
    }
}

impl ClusterState {
    pub fn n_clusters(&self) -> usize {
        self.v_beta.len()
    }

    /// log(1 - V_c), c < C, on one side.
    pub fn log1m_v(&self, side: Side) -> Vec<f64> {
        let (v, stored) = match side {
            Side::Beta => (&self.v_beta, &self.log1m_v_beta),
            Side::Theta => (&self.v_theta, &self.log1m_v_theta),
        };
        let c = v.len().saturating_sub(1);
        if stored.len() == c {
            stored.clone()
        } else {
            v[..c].iter().map(|x| (-x).ln_1p()).collect()
        }
    }

    fn set_stick(&mut self, side: Side, c: usize, stick: Stick) {
        let n = self.n_clusters().saturating_sub(1);
        let derived = self.log1m_v(side);
        let (v, slot) = match side {
            Side::Beta => (&mut self.v_beta, &mut self.log1m_v_beta),
            Side::Theta => (&mut self.v_theta, &mut self.log1m_v_theta),
        };
        if slot.len() != n {
            *slot = derived;
        }
        slot[c] = stick.log1m;
        v[c] = stick.v;
    }

    pub fn pi_beta(&self) -> Vec<f64> {
        stick_weights_unchecked(&self.v_beta)
    }

    pub fn pi_theta(&self) -> Vec<f64> {
        stick_weights_unchecked(&self.v_theta)
    }

    pub fn indicators(&self, side: Side) -> &IndicatorTable {
        match side {
            Side::Beta => &self.z_beta,
            Side::Theta => &self.z_theta,
        }
    }

    /// Sum over pairs of log pi*_{Z^beta, Z^theta} (or log pi^beta alone when
    /// only beta indicators are active).
    pub fn log_indicator_prior(&self) -> f64 {
        let pb = self.pi_beta();
        match self.mode {
            IndicatorMode::Joint => {
                let pt = self.pi_theta();
                let norm = joint_normalizer(&pb, &pt, self.rho);
                let mut s = 0.0;
                for (zb, zt) in self.z_beta.data.iter().zip(&self.z_theta.data) {
                    s += pb[*zb].ln() + pt[*zt].ln();
                    if zb == zt {
                        s += self.rho.ln_1p();
                    }
                }
                s - self.z_beta.data.len() as f64 * norm.ln()
            }
            _ => self.z_beta.data.iter().map(|&z| pb[z].ln()).sum(),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let c = self.n_clusters();
        if self.v_theta.len() != c || self.beta_atoms.len() != c {
            return Err(Error::Numerical("cluster arrays have inconsistent lengths".into()));
        }
        for v in [&self.v_beta, &self.v_theta] {
            if v[c - 1] != 1.0 {
                return Err(Error::Numerical("last stick fraction differs from 1".into()));
            }
            if v.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
                return Err(Error::Numerical("stick fraction outside (0, 1]".into()));
            }
        }
        if self.z_beta.data.iter().chain(&self.z_theta.data).any(|&z| z >= c) {
            return Err(Error::Numerical("indicator out of range".into()));
        }
        if self.mode == IndicatorMode::Joint {
            for t in &self.theta_atoms {
                if (t.norm() - 1.0).abs() > 1e-10 {
                    return Err(Error::Numerical("theta atom left the unit sphere".into()));
                }
            }
        }
        if !(self.alpha_beta > 0.0 && self.alpha_theta > 0.0 && self.rho >= 0.0) {
            return Err(Error::Numerical("invalid concentration or dependence parameter".into()));
        }
        Ok(())
    }
}

fn stick_weights_unchecked(v: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    v.iter()
        .map(|&vc| {
            let p = vc * rest;
            rest *= 1.0 - vc;
            p
        })
        .collect()
}

/// pi_c = V_c prod_{j<c} (1 - V_j).
pub fn stick_weights(v: &[f64]) -> Result<Vec<f64>> {
    match v.last() {
        None => return arg_err("empty stick vector"),
        Some(&last) if last != 1.0 => return arg_err(format!("last stick fraction is {last}, must be 1")),
        _ => {}
    }
    if v.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
        return arg_err("stick fractions must lie in (0, 1]");
    }
    Ok(stick_weights_unchecked(v))
}

fn joint_normalizer(pb: &[f64], pt: &[f64], rho: f64) -> f64 {
    1.0 + rho * pb.iter().zip(pt).map(|(a, b)| a * b).sum::<f64>()
}

/// C x C table proportional to (1 + rho)^{I(a=b)} pi^beta_a pi^theta_b.
pub fn joint_indicator_pmf(pi_beta: &[f64], pi_theta: &[f64], rho: f64) -> Result<DMatrix<f64>> {
    if !(rho >= 0.0) {
        return arg_err(format!("rho must be nonnegative, got {rho}"));
    }
    if pi_beta.len() != pi_theta.len() {
        return arg_err("pi vectors differ in length");
    }
    for p in [pi_beta, pi_theta] {
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|x| *x < 0.0) {
            return arg_err("weights must be nonnegative and sum to one");
        }
    }
    let c = pi_beta.len();
    let norm = joint_normalizer(pi_beta, pi_theta, rho);
    let mut out = DMatrix::zeros(c, c);
    for a in 0..c {
        for b in 0..c {
            let infl = if a == b { 1.0 + rho } else { 1.0 };
            out[(a, b)] = infl * pi_beta[a] * pi_theta[b] / norm;
        }
    }
    Ok(out)
}

/// Likelihood oracle used by the indicator update. `log_lik` returns the log
/// Gaussian likelihood of pair (k, j) with the candidate atom substituted on
/// `side` (all other indicators as in `state`); `commit` is called after the
/// indicator of (k, j) on `side` has been redrawn.
pub trait IndicatorLikelihood {
    fn log_lik(&mut self, state: &ClusterState, k: usize, j: usize, side: Side, candidate: usize) -> f64;
    fn commit(&mut self, state: &ClusterState, k: usize, j: usize, side: Side);
}

impl<F> IndicatorLikelihood for F
where
    F: FnMut(usize, usize, usize, Side) -> f64,
{
    fn log_lik(&mut self, _state: &ClusterState, k: usize, j: usize, side: Side, candidate: usize) -> f64 {
        self(k, j, candidate, side)
    }
    fn commit(&mut self, _state: &ClusterState, _k: usize, _j: usize, _side: Side) {}
}

/// Draw an index from unnormalized log-probabilities.
pub fn sample_log_categorical<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let lse = logsumexp(logp);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += (lp - lse).exp();
        if u < acc {
            return i;
        }
    }
    // Round-off: return the last index with positive mass.
    logp.iter().rposition(|lp| lp.is_finite()).unwrap_or(logp.len() - 1)
}

/// Redraw Z^beta_kj and then Z^theta_kj for every pair in row-major order.
pub fn gibbs_update_indicators<L, R>(state: &mut ClusterState, lik: &mut L, rng: &mut R) -> Result<()>
where
    L: IndicatorLikelihood + ?Sized,
    R: Rng + ?Sized,
{
    if state.mode == IndicatorMode::Fixed {
        return Ok(());
    }
    let c = state.n_clusters();
    let log_pb: Vec<f64> = state.pi_beta().iter().map(|p| p.ln()).collect();
    let log_pt: Vec<f64> = state.pi_theta().iter().map(|p| p.ln()).collect();
    let log_diag = state.rho.ln_1p();
    let joint = state.mode == IndicatorMode::Joint;
    let mut lp = vec![0.0; c];
    for k in 0..state.z_beta.rows {
        for j in 0..state.z_beta.cols {
            let zt = state.z_theta.get(k, j);
            for (a, slot) in lp.iter_mut().enumerate() {
                let ll = lik.log_lik(state, k, j, Side::Beta, a);
                if ll.is_nan() || ll == f64::INFINITY {
                    return Err(Error::Numerical(format!("non-finite log-likelihood for pair ({k}, {j})")));
                }
                let mut prior = log_pb[a];
                if joint && a == zt {
                    prior += log_diag;
                }
                *slot = prior + ll;
            }
            if lp.iter().all(|v| *v == f64::NEG_INFINITY) {
                return Err(Error::Numerical(format!("all candidates impossible for pair ({k}, {j})")));
            }
            let new_b = sample_log_categorical(&lp, rng);
            state.z_beta.set(k, j, new_b);
            lik.commit(state, k, j, Side::Beta);
            if !joint {
                continue;
            }
            for (b, slot) in lp.iter_mut().enumerate() {
                let ll = lik.log_lik(state, k, j, Side::Theta, b);
                if ll.is_nan() || ll == f64::INFINITY {
                    return Err(Error::Numerical(format!("non-finite log-likelihood for pair ({k}, {j})")));
                }
                let mut prior = log_pt[b];
                if b == new_b {
                    prior += log_diag;
                }
                *slot = prior + ll;
            }
            if lp.iter().all(|v| *v == f64::NEG_INFINITY) {
                return Err(Error::Numerical(format!("all candidates impossible for pair ({k}, {j})")));
            }
            let new_t = sample_log_categorical(&lp, rng);
            state.z_theta.set(k, j, new_t);
            lik.commit(state, k, j, Side::Theta);
        }
    }
    Ok(())
}

fn clamp_v(v: f64) -> f64 {
    v.clamp(V_MIN, V_MAX)
}

/// A stick fraction together with an accurate log(1 - V).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stick {
    v: f64,
    log1m: f64,
}

impl Stick {
    fn from_v(v: f64) -> Self {
        let v = clamp_v(v);
        Stick { v, log1m: (-v).ln_1p() }
    }
}

/// log of a Gamma(shape, 1) draw, exact in the far left tail for small shapes.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    let boost = shape < 1.0;
    let g = Gamma::new(if boost { shape + 1.0 } else { shape }, 1.0)
        .map_err(|e| Error::Numerical(format!("gamma({shape}): {e}")))?;
    let mut lg = g.sample(rng).ln();
    if boost {
        let u: f64 = rng.random();
        lg += (1.0 - u).ln() / shape;
    }
    Ok(lg)
}

/// Beta(a, b) draw as X / (X + Y) with both gammas kept on the log scale.
fn sample_stick<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<Stick> {
    let lx = log_gamma_draw(a, rng)?;
    let ly = log_gamma_draw(b, rng)?;
    let lse = logsumexp(&[lx, ly]);
    Ok(Stick { v: clamp_v((lx - lse).exp()), log1m: ly - lse })
}

/// Stick weights with V_c replaced by `value`.
fn weights_with(v: &[f64], c: usize, value: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    w[c] = value;
    stick_weights_unchecked(&w)
}

/// Log of the joint normalizer as a function of the stick vector on `side`.
fn log_norm_side(state: &ClusterState, side: Side, c: usize, value: f64) -> f64 {
    if state.mode != IndicatorMode::Joint || state.rho == 0.0 {
        return 0.0;
    }
    let (pb, pt) = match side {
        Side::Beta => (weights_with(&state.v_beta, c, value), state.pi_theta()),
        Side::Theta => (state.pi_beta(), weights_with(&state.v_theta, c, value)),
    };
    joint_normalizer(&pb, &pt, state.rho).ln()
}

/// Update V_1..V_{C-1} on one side. Returns the number of accepted proposals
/// (every grid draw counts as accepted).
pub fn update_stick_weights<R: Rng + ?Sized>(
    state: &mut ClusterState,
    side: Side,
    hyper: &ClusterHyper,
    rng: &mut R,
) -> Result<usize> {
    if state.mode == IndicatorMode::Fixed || (side == Side::Theta && state.mode != IndicatorMode::Joint) {
        return Ok(0);
    }
    let c_tot = state.n_clusters();
    let n_pairs = state.z_beta.data.len() as f64;
    let counts = state.indicators(side).counts(c_tot);
    let alpha = match side {
        Side::Beta => state.alpha_beta,
        Side::Theta => state.alpha_theta,
    };
    let mut accepted = 0;
    let mut tail: usize = counts.iter().sum();
    for c in 0..c_tot.saturating_sub(1) {
        tail -= counts[c];
        let a = 1.0 + counts[c] as f64;
        let b = alpha + tail as f64;
        let current = match side {
            Side::Beta => state.v_beta[c],
            Side::Theta => state.v_theta[c],
        };
        match hyper.stick_method {
            UpdateMethod::Metropolis => {
                let prop = sample_stick(a, b, rng)?;
                let log_ratio =
                    -n_pairs * (log_norm_side(state, side, c, prop.v) - log_norm_side(state, side, c, current));
                if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                    accepted += 1;
                    state.set_stick(side, c, prop);
                }
            }
            UpdateMethod::Grid => {
                let g = hyper.gridsize.max(1);
                let nodes: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
                let lw: Vec<f64> = nodes
                    .iter()
                    .map(|&v| {
                        (a - 1.0) * v.ln() + (b - 1.0) * (1.0 - v).ln()
                            - n_pairs * log_norm_side(state, side, c, v)
                    })
                    .collect();
                accepted += 1;
                state.set_stick(side, c, Stick::from_v(nodes[sample_log_categorical(&lw, rng)]));
            }
        }
    }
    Ok(accepted)
}

/// Shape and rate of the Gamma full conditional of a concentration parameter,
/// from log(1 - V_c) over the C - 1 free sticks.
pub fn concentration_conditional(log1m_v: &[f64], a: f64, b: f64) -> (f64, f64) {
    let s: f64 = log1m_v.iter().sum();
    (a + log1m_v.len() as f64, b - s)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

pub fn update_concentrations<R: Rng + ?Sized>(
    state: &mut ClusterState,
    hyper: &ClusterHyper,
    rng: &mut R,
) -> Result<()> {
    if state.mode == IndicatorMode::Fixed {
        return Ok(());
    }
    let (s, r) = concentration_conditional(&state.log1m_v(Side::Beta), hyper.a_beta, hyper.b_beta);
    state.alpha_beta = sample_gamma(s, r, rng)?;
    if state.mode == IndicatorMode::Joint {
        let (s, r) = concentration_conditional(&state.log1m_v(Side::Theta), hyper.a_theta, hyper.b_theta);
        state.alpha_theta = sample_gamma(s, r, rng)?;
    }
    Ok(())
}

/// Log density of log(rho) under the full conditional, up to a constant.
/// Includes the Jacobian term log(rho) of the change of variable.
pub fn rho_log_target(state: &ClusterState, hyper: &ClusterHyper, rho: f64) -> f64 {
    rho_log_density(state, hyper, rho) + rho.ln()
}

/// Full-conditional density of rho itself (no change of variable).
pub fn rho_log_density(state: &ClusterState, hyper: &ClusterHyper, rho: f64) -> f64 {
    if rho <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let pb = state.pi_beta();
    let pt = state.pi_theta();
    let same = state.z_beta.data.iter().zip(&state.z_theta.data).filter(|(a, b)| a == b).count() as f64;
    let n = state.z_beta.data.len() as f64;
    (hyper.a_rho - 1.0) * rho.ln() - hyper.b_rho * rho + same * rho.ln_1p()
        - n * joint_normalizer(&pb, &pt, rho).ln()
}

/// Random-walk Metropolis on log(rho). Returns whether the proposal was accepted.
pub fn update_rho<R: Rng + ?Sized>(state: &mut ClusterState, hyper: &ClusterHyper, rng: &mut R) -> bool {
    if state.mode != IndicatorMode::Joint {
        return false;
    }
    let z: f64 = rng.sample(StandardNormal);
    let prop = (state.rho.ln() + hyper.rw_sd * z).exp();
    if !(prop > 0.0 && prop.is_finite()) {
        return false;
    }
    let log_ratio = rho_log_target(state, hyper, prop) - rho_log_target(state, hyper, state.rho);
    if rng.random::<f64>().ln() < log_ratio {
        state.rho = prop;
        true
    } else {
        false
    }
}

/// Draw sticks and indicators from the prior (rho and alphas held fixed).
pub fn sample_prior_indicators<R: Rng + ?Sized>(state: &mut ClusterState, rng: &mut R) -> Result<()> {
    let c = state.n_clusters();
    for c_idx in 0..c - 1 {
        let sb = sample_stick(1.0, state.alpha_beta, rng)?;
        state.set_stick(Side::Beta, c_idx, sb);
        let st = sample_stick(1.0, state.alpha_theta, rng)?;
        state.set_stick(Side::Theta, c_idx, st);
    }
    let pb = state.pi_beta();
    let pt = state.pi_theta();
    match state.mode {
        IndicatorMode::Joint => {
            let table = joint_indicator_pmf(&pb, &pt, state.rho)?;
            let logs: Vec<f64> = table.iter().map(|p| p.ln()).collect();
            for i in 0..state.z_beta.data.len() {
                // column-major storage: flat index = a + b * C
                let idx = sample_log_categorical(&logs, rng);
                state.z_beta.data[i] = idx % c;
                state.z_theta.data[i] = idx / c;
            }
        }
        IndicatorMode::BetaOnly => {
            let logs: Vec<f64> = pb.iter().map(|p| p.ln()).collect();
            for z in state.z_beta.data.iter_mut() {
                *z = sample_log_categorical(&logs, rng);
            }
        }
        IndicatorMode::Fixed => {}
    }
    Ok(())
}
