//! Metropolis-within-Gibbs sampler for the clustered index models.

mod engine;
mod prior;
mod state;
mod theta;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::coclustering::{
    gibbs_update_indicators, sample_gamma, update_concentrations, update_rho, update_stick_weights,
    ClusterHyper, ClusterState, IndicatorLikelihood, IndicatorMode, IndicatorTable, Side,
};
use crate::error::{Error, Result};
use crate::fitted::FittedModel;
use crate::linalg::{clean_psd, orthonormal_columns, project_out, sample_gaussian_canonical, std_normal_vec};
use crate::model::{compute_index_inputs, ClusteringMode, Dataset, ModelKind, ModelSpec};
use crate::nonseparable::tensor_penalty;
use crate::rng::{rng_from_seed, ChainRng};
use crate::sphere::fb_log_normalizer_eigen;

use engine::{Engine, IndexEngine, TensorEngine};
pub use state::{AcceptanceCounter, ChainMeta, ChainOutput, Diagnostics, ParamState, SweepControl};

/// Relative eigenvalue threshold below which penalty directions count as null.
const PENALTY_TOL: f64 = 1e-9;

pub struct Sampler {
    model: FittedModel,
    y: DMatrix<f64>,
    z: DMatrix<f64>,
    ztz_chol: Option<Cholesky<f64, Dyn>>,
    engine: Engine,
    pub state: ParamState,
    control: SweepControl,
    rng: ChainRng,
    fx: Vec<Vec<f64>>,
    resid: Vec<Vec<f64>>,
    coef: Vec<DVector<f64>>,
    penalty: DMatrix<f64>,
    penalty_eigs: Vec<f64>,
    penalty_rank: usize,
    theta_q: DMatrix<f64>,
    theta_q_eigs: Vec<f64>,
    theta_q_vecs: DMatrix<f64>,
    log_c0_cache: Option<(f64, f64)>,
    pub diagnostics: Diagnostics,
    n: usize,
    k: usize,
    j: usize,
    c: usize,
}

fn indicator_mode(spec: &ModelSpec) -> IndicatorMode {
    match (spec.clustering, spec.has_theta()) {
        (ClusteringMode::Unclustered, _) => IndicatorMode::Fixed,
        (ClusteringMode::Clustered, true) => IndicatorMode::Joint,
        (ClusteringMode::Clustered, false) => IndicatorMode::BetaOnly,
    }
}

impl Sampler {
    pub fn new(spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<Self> {
        let model = FittedModel::build(spec, data)?;
        let n = data.n();
        let k = spec.n_outcomes;
        let j = spec.n_indices;
        let c = spec.effective_truncation();
        let (engine, raw_penalty) = if spec.model_kind == ModelKind::NonseparableDlnm {
            let designs = model.tensor_designs(data)?;
            let s_theta = spec.theta_prior_matrix()?;
            (Engine::Tensor(TensorEngine::new(designs)), tensor_penalty(&model.basis.penalty, &s_theta))
        } else {
            let inputs = compute_index_inputs(spec, &data.xstar)?;
            let e = IndexEngine::new(inputs, model.basis.clone(), c, spec.model_kind == ModelKind::Additive);
            (Engine::Index(e), model.basis.penalty.clone())
        };
        let (penalty, eigs, _) = clean_psd(&raw_penalty, PENALTY_TOL);
        let penalty_eigs: Vec<f64> = eigs.iter().copied().collect();
        let penalty_rank = penalty_eigs.iter().filter(|v| **v > 0.0).count();
        let theta_q = spec.theta_prior_matrix()?;
        let (q_vals, q_vecs) = crate::linalg::sym_eigen_sorted(&theta_q);
        let q = data.z.ncols();
        let ztz_chol = if q > 0 {
            Some(
                (data.z.transpose() * &data.z)
                    .cholesky()
                    .ok_or_else(|| Error::Data("covariate cross-product is singular".into()))?,
            )
        } else {
            None
        };

        let mode = indicator_mode(spec);
        let mut v = vec![0.5; c];
        v[c - 1] = 1.0;
        let atom_dim = match &engine {
            Engine::Tensor(t) => t.designs[0].ncols(),
            Engine::Index(_) => model.basis.dim(),
        };
        let theta_atoms = if spec.model_kind == ModelKind::NonseparableDlnm {
            vec![]
        } else {
            vec![model.initial_theta.clone(); c]
        };
        let cluster = ClusterState {
            mode,
            z_beta: IndicatorTable::distinct(k, j, c),
            z_theta: if mode == IndicatorMode::BetaOnly { IndicatorTable::new(k, j, 0) } else { IndicatorTable::distinct(k, j, c) },
            v_beta: v.clone(),
            v_theta: v,
            log1m_v_beta: vec![],
            log1m_v_theta: vec![],
            alpha_beta: 1.0,
            alpha_theta: 1.0,
            rho: 1.0,
            beta_atoms: vec![DVector::zeros(atom_dim); c],
            theta_atoms,
        };
        let beta0 = DVector::from_iterator(k, data.y.column_iter().map(|col| col.mean()));
        let sigma2 = DVector::from_iterator(
            k,
            data.y.column_iter().map(|col| {
                let m = col.mean();
                let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
                if v > 1e-8 { v } else { 1.0 }
            }),
        );
        let state = ParamState {
            cluster,
            beta0,
            beta_z: DMatrix::zeros(k, q),
            u: DVector::zeros(n),
            xi: 0.1,
            sigma2,
            lambda_beta: 1.0,
            lambda_theta: 10.0,
        };
        let mut s = Sampler {
            model,
            y: data.y.clone(),
            z: data.z.clone(),
            ztz_chol,
            engine,
            state,
            control: SweepControl::all(),
            rng: rng_from_seed(seed),
            fx: vec![vec![0.0; n]; k * j],
            resid: vec![vec![0.0; n]; k],
            coef: vec![],
            penalty,
            penalty_eigs,
            penalty_rank,
            theta_q,
            theta_q_eigs: q_vals.iter().copied().collect(),
            theta_q_vecs: q_vecs,
            log_c0_cache: None,
            diagnostics: Diagnostics::default(),
            n,
            k,
            j,
            c,
        };
        s.refresh();
        Ok(s)
    }

    pub fn with_control(mut self, control: SweepControl) -> Self {
        self.control = control;
        self
    }

    pub fn set_control(&mut self, control: SweepControl) {
        self.control = control;
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Replace the outcome matrix (same shape).
    pub fn set_outcomes(&mut self, y: DMatrix<f64>) -> Result<()> {
        if y.shape() != self.y.shape() {
            return Err(Error::Dimension("replacement outcomes have the wrong shape".into()));
        }
        self.y = y;
        self.refresh();
        Ok(())
    }

    /// Replace the whole parameter state.
    pub fn set_state(&mut self, state: ParamState) -> Result<()> {
        if state.cluster.n_clusters() != self.c || state.beta0.len() != self.k || state.u.len() != self.n {
            return Err(Error::Dimension("state does not match the sampler dimensions".into()));
        }
        self.state = state;
        self.engine_invalidate_all();
        self.log_c0_cache = None;
        self.refresh();
        Ok(())
    }

    pub fn rng_mut(&mut self) -> &mut ChainRng {
        &mut self.rng
    }

    /// Rank of the (cleaned) atom penalty.
    pub fn penalty_rank(&self) -> usize {
        self.penalty_rank
    }

    pub fn penalty_matrix(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Prior precision of a beta atom at the current lambda^beta.
    pub fn atom_prior_precision(&self) -> DMatrix<f64> {
        let d = self.penalty.nrows();
        &self.penalty * self.state.lambda_beta + DMatrix::identity(d, d) * self.model.spec.hyper.null_precision
    }

    fn engine_invalidate_all(&mut self) {
        if let Engine::Index(e) = &mut self.engine {
            e.invalidate_all();
        }
    }

    fn atom_coef(&self, beta: &DVector<f64>) -> DVector<f64> {
        match &self.engine {
            Engine::Index(e) => e.basis.raw_coefficients(beta),
            Engine::Tensor(_) => beta.clone(),
        }
    }

    fn theta_slice(&self, c: usize) -> Vec<f64> {
        self.state.cluster.theta_atoms.get(c).map(|t| t.as_slice().to_vec()).unwrap_or_default()
    }

    /// F_kj at the current indicators and atoms.
    fn eval_pair(&mut self, k: usize, j: usize) -> Vec<f64> {
        let zb = self.state.cluster.z_beta.get(k, j);
        let zt = self.state.cluster.z_theta.get(k, j);
        let theta = self.theta_slice(zt);
        let mut out = vec![0.0; self.n];
        self.engine.eval_into(j, zt, &theta, &self.coef[zb], &mut out);
        out
    }

    /// Recompute coefficient images, pair contributions and residuals from scratch.
    pub fn refresh(&mut self) {
        self.coef = self.state.cluster.beta_atoms.iter().map(|b| self.atom_coef(b)).collect();
        for k in 0..self.k {
            for j in 0..self.j {
                self.fx[k * self.j + j] = self.eval_pair(k, j);
            }
        }
        self.recompute_residuals();
    }

    fn recompute_residuals(&mut self) {
        let s = &self.state;
        for k in 0..self.k {
            let sig = s.sigma2[k].sqrt();
            let zb: Option<DVector<f64>> = if self.z.ncols() > 0 {
                Some(&self.z * s.beta_z.row(k).transpose())
            } else {
                None
            };
            let r = &mut self.resid[k];
            for i in 0..self.n {
                let mut v = self.y[(i, k)] - s.beta0[k] - s.xi * sig * s.u[i];
                if let Some(zb) = &zb {
                    v -= zb[i];
                }
                for j in 0..self.j {
                    v -= self.fx[k * self.j + j][i];
                }
                r[i] = v;
            }
        }
    }

    /// Current residual matrix y - fitted (n x K).
    pub fn residuals(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.k, |i, k| self.resid[k][i])
    }

    /// Current pair contribution F_kj.
    pub fn pair_contribution(&self, k: usize, j: usize) -> &[f64] {
        &self.fx[k * self.j + j]
    }

    fn cluster_hyper(&self) -> ClusterHyper {
        let h = &self.model.spec.hyper;
        ClusterHyper {
            a_beta: h.a_beta,
            b_beta: h.b_beta,
            a_theta: h.a_theta,
            b_theta: h.b_theta,
            a_rho: h.a_rho,
            b_rho: h.b_rho,
            rw_sd: h.rw_sd,
            gridsize: h.gridsize,
            stick_method: h.stick_update,
        }
    }

    /// One full sweep in the fixed step order.
    pub fn sweep(&mut self) -> Result<()> {
        self.refresh();
        let ctl = self.control;
        let hyper = self.cluster_hyper();
        let mode = self.state.cluster.mode;
        if ctl.indicators && mode != IndicatorMode::Fixed {
            self.step_indicators()?;
        }
        if ctl.sticks && mode != IndicatorMode::Fixed {
            let cm1 = (self.c - 1) as u64;
            let acc = update_stick_weights(&mut self.state.cluster, Side::Beta, &hyper, &mut self.rng)? as u64;
            self.diagnostics.sticks_beta.proposed += cm1;
            self.diagnostics.sticks_beta.accepted += acc;
            if mode == IndicatorMode::Joint {
                let acc = update_stick_weights(&mut self.state.cluster, Side::Theta, &hyper, &mut self.rng)? as u64;
                self.diagnostics.sticks_theta.proposed += cm1;
                self.diagnostics.sticks_theta.accepted += acc;
            }
        }
        if ctl.beta_atoms {
            self.step_beta_atoms()?;
        }
        if ctl.theta_atoms && self.model.spec.has_theta() {
            self.step_theta_atoms()?;
        }
        if ctl.concentrations && mode != IndicatorMode::Fixed {
            update_concentrations(&mut self.state.cluster, &hyper, &mut self.rng)?;
        }
        if ctl.rho && mode == IndicatorMode::Joint {
            let a = update_rho(&mut self.state.cluster, &hyper, &mut self.rng);
            self.diagnostics.rho.record(a);
        }
        if ctl.lambda_beta {
            self.step_lambda_beta()?;
        }
        if ctl.lambda_theta && self.model.spec.has_theta() {
            self.step_lambda_theta();
        }
        if ctl.random_effects {
            self.step_random_effects();
        }
        if ctl.xi {
            self.step_xi();
        }
        if ctl.sigma2 {
            self.step_sigma2();
        }
        if ctl.intercepts || ctl.covariates {
            self.step_fixed_effects(ctl.intercepts, ctl.covariates);
        }
        self.diagnostics.sweeps += 1;
        Ok(())
    }

    fn step_indicators(&mut self) -> Result<()> {
        struct IndLik<'a> {
            engine: &'a mut Engine,
            fx: &'a mut [Vec<f64>],
            resid: &'a mut [Vec<f64>],
            coef: &'a [DVector<f64>],
            sigma2: &'a DVector<f64>,
            n_idx: usize,
            buf: Vec<f64>,
        }
        impl IndLik<'_> {
            fn fill(&mut self, st: &ClusterState, j: usize, zb: usize, zt: usize) {
                let theta = st.theta_atoms.get(zt).map(|t| t.as_slice()).unwrap_or(&[]);
                self.engine.eval_into(j, zt, theta, &self.coef[zb], &mut self.buf);
            }
        }
        impl IndicatorLikelihood for IndLik<'_> {
            fn log_lik(&mut self, st: &ClusterState, k: usize, j: usize, side: Side, cand: usize) -> f64 {
                let (zb, zt) = match side {
                    Side::Beta => (cand, st.z_theta.get(k, j)),
                    Side::Theta => (st.z_beta.get(k, j), cand),
                };
                self.fill(st, j, zb, zt);
                let fx = &self.fx[k * self.n_idx + j];
                let r = &self.resid[k];
                let mut ss = 0.0;
                for i in 0..r.len() {
                    let e = r[i] + fx[i] - self.buf[i];
                    ss += e * e;
                }
                -0.5 * ss / self.sigma2[k]
            }
            fn commit(&mut self, st: &ClusterState, k: usize, j: usize, _side: Side) {
                self.fill(st, j, st.z_beta.get(k, j), st.z_theta.get(k, j));
                let fx = &mut self.fx[k * self.n_idx + j];
                let r = &mut self.resid[k];
                for i in 0..r.len() {
                    r[i] += fx[i] - self.buf[i];
                    fx[i] = self.buf[i];
                }
            }
        }
        let Sampler { engine, fx, resid, coef, state, rng, n, j, .. } = self;
        let ParamState { cluster, sigma2, .. } = state;
        let mut lik = IndLik { engine, fx, resid, coef, sigma2, n_idx: *j, buf: vec![0.0; *n] };
        gibbs_update_indicators(cluster, &mut lik, rng)
    }

    fn step_beta_atoms(&mut self) -> Result<()> {
        let prior = self.atom_prior_precision();
        for c in 0..self.c {
            let members = self.state.cluster.z_beta.members(c);
            let beta = if members.is_empty() {
                sample_gaussian_canonical(&prior, &DVector::zeros(prior.nrows()), &mut self.rng)?
            } else {
                let (gram, lin) = self.atom_normal_equations(&members);
                sample_gaussian_canonical(&(&prior + gram), &lin, &mut self.rng)?
            };
            self.set_beta_atom(c, beta, &members);
        }
        Ok(())
    }

    /// Likelihood precision and linear term of a beta atom given its members.
    fn atom_normal_equations(&mut self, members: &[(usize, usize)]) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.penalty.nrows();
        let mut gram = DMatrix::zeros(d, d);
        let mut lin = DVector::zeros(d);
        for k in 0..self.k {
            let js: Vec<usize> = members.iter().filter(|(kk, _)| *kk == k).map(|(_, j)| *j).collect();
            if js.is_empty() {
                continue;
            }
            let w = 1.0 / self.state.sigma2[k];
            let mut e = DVector::from_column_slice(&self.resid[k]);
            for &j in &js {
                for (ei, f) in e.iter_mut().zip(&self.fx[k * self.j + j]) {
                    *ei += f;
                }
            }
            match &mut self.engine {
                Engine::Index(eng) => {
                    let mut raw = DMatrix::zeros(self.n, eng.basis.basis.n_basis);
                    for &j in &js {
                        let zt = self.state.cluster.z_theta.get(k, j);
                        let theta = self.state.cluster.theta_atoms.get(zt).map(|t| t.as_slice().to_vec()).unwrap_or_default();
                        eng.add_raw_design(j, zt, &theta, &mut raw);
                    }
                    let t = &eng.basis.transform;
                    let bt = raw * t;
                    gram += bt.tr_mul(&bt) * w;
                    lin += bt.tr_mul(&e) * w;
                }
                Engine::Tensor(eng) => {
                    let jj = self.j;
                    for &a in &js {
                        for &b in &js {
                            gram += &eng.gram[a * jj + b] * w;
                        }
                        lin += eng.designs[a].tr_mul(&e) * w;
                    }
                }
            }
        }
        crate::linalg::symmetrize(&mut gram);
        (gram, lin)
    }

    fn set_beta_atom(&mut self, c: usize, beta: DVector<f64>, members: &[(usize, usize)]) {
        self.coef[c] = self.atom_coef(&beta);
        self.state.cluster.beta_atoms[c] = beta;
        for &(k, j) in members {
            let new = self.eval_pair(k, j);
            let old = &mut self.fx[k * self.j + j];
            let r = &mut self.resid[k];
            for i in 0..self.n {
                r[i] += old[i] - new[i];
            }
            *old = new;
        }
    }

    /// Shape and rate of the Gamma proposal for lambda^beta.
    pub fn lambda_beta_conditional(&self) -> (f64, f64) {
        let h = &self.model.spec.hyper;
        let quad: f64 = self
            .state
            .cluster
            .beta_atoms
            .iter()
            .map(|b| (b.transpose() * &self.penalty * b)[(0, 0)])
            .sum();
        (
            h.a_lambda_beta + self.c as f64 * self.penalty_rank as f64 / 2.0,
            h.b_lambda_beta + 0.5 * quad.max(0.0),
        )
    }

    fn lambda_beta_log_weight(&self, lambda: f64) -> f64 {
        ridge_log_weight(&self.penalty_eigs, self.model.spec.hyper.null_precision, self.c as f64, lambda)
    }

    fn step_lambda_beta(&mut self) -> Result<()> {
        let (shape, rate) = self.lambda_beta_conditional();
        let prop = sample_gamma(shape, rate, &mut self.rng)?;
        let log_ratio = self.lambda_beta_log_weight(prop) - self.lambda_beta_log_weight(self.state.lambda_beta);
        let accept = log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio;
        if accept {
            self.state.lambda_beta = prop;
        }
        self.diagnostics.lambda_beta.record(accept);
        // The Gamma proposal ignores the ridge factor, which dominates at small
        // lambda when eps is not tiny; a slice move on log(lambda) keeps the
        // chain from freezing there.
        let (eigs, eps, c) = (&self.penalty_eigs, self.model.spec.hyper.null_precision, self.c as f64);
        let log_target = |eta: f64| shape * eta - rate * eta.exp() + ridge_log_weight(eigs, eps, c, eta.exp());
        let eta = slice_step(self.state.lambda_beta.ln(), 1.0, &log_target, &mut self.rng);
        self.state.lambda_beta = eta.exp();
        Ok(())
    }

    /// log C0 of the index-weight prior at concentration `lambda`.
    pub fn theta_log_normalizer(&self, lambda: f64) -> Result<f64> {
        let eigs: Vec<f64> = self.theta_q_eigs.iter().map(|v| 0.5 * lambda * v).collect();
        let tau = self.model.spec.hyper.tau_theta;
        let ones = DVector::from_element(self.theta_q_vecs.nrows(), tau);
        let g = self.theta_q_vecs.tr_mul(&ones);
        fb_log_normalizer_eigen(&eigs, g.as_slice())
    }

    fn lambda_theta_log_target(&self, lambda: f64, log_c0: f64, quad: f64) -> f64 {
        let h = &self.model.spec.hyper;
        (h.a_lambda_theta - 1.0) * lambda.ln() - h.b_lambda_theta * lambda - self.c as f64 * log_c0 - 0.5 * lambda * quad
            + lambda.ln()
    }

    fn step_lambda_theta(&mut self) {
        let quad: f64 = self
            .state
            .cluster
            .theta_atoms
            .iter()
            .map(|t| (t.transpose() * &self.theta_q * t)[(0, 0)])
            .sum();
        let cur = self.state.lambda_theta;
        let cur_c0 = match self.log_c0_cache {
            Some((l, v)) if l == cur => v,
            _ => match self.theta_log_normalizer(cur) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("saddlepoint failure at current lambda_theta: {e}");
                    self.diagnostics.saddlepoint_failures += 1;
                    return;
                }
            },
        };
        self.log_c0_cache = Some((cur, cur_c0));
        let z: f64 = self.rng.sample(StandardNormal);
        let prop = cur * (self.model.spec.hyper.rw_sd * z).exp();
        if !(prop > 0.0 && prop.is_finite()) {
            self.diagnostics.lambda_theta.record(false);
            return;
        }
        let prop_c0 = match self.theta_log_normalizer(prop) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("saddlepoint failure, proposal rejected: {e}");
                self.diagnostics.saddlepoint_failures += 1;
                self.diagnostics.lambda_theta.record(false);
                return;
            }
        };
        let log_ratio =
            self.lambda_theta_log_target(prop, prop_c0, quad) - self.lambda_theta_log_target(cur, cur_c0, quad);
        let accept = self.rng.random::<f64>().ln() < log_ratio;
        if accept {
            self.state.lambda_theta = prop;
            self.log_c0_cache = Some((prop, prop_c0));
        }
        self.diagnostics.lambda_theta.record(accept);
    }

    /// Columns spanned by the fixed effects at the current state.
    pub fn fixed_effect_columns(&mut self) -> DMatrix<f64> {
        let mut cols: Vec<DMatrix<f64>> = vec![DMatrix::from_element(self.n, 1, 1.0)];
        if self.z.ncols() > 0 {
            cols.push(self.z.clone());
        }
        match &mut self.engine {
            Engine::Index(eng) => {
                let mut seen = std::collections::BTreeSet::new();
                for k in 0..self.k {
                    for j in 0..self.j {
                        let zt = if eng.additive { 0 } else { self.state.cluster.z_theta.get(k, j) };
                        if seen.insert((j, zt)) {
                            let theta =
                                self.state.cluster.theta_atoms.get(zt).map(|t| t.as_slice().to_vec()).unwrap_or_default();
                            cols.push(eng.centred_design(j, zt, &theta));
                        }
                    }
                }
            }
            Engine::Tensor(eng) => cols.extend(eng.designs.iter().cloned()),
        }
        let total: usize = cols.iter().map(|c| c.ncols()).sum();
        let mut out = DMatrix::zeros(self.n, total);
        let mut at = 0;
        for c in cols {
            out.columns_mut(at, c.ncols()).copy_from(&c);
            at += c.ncols();
        }
        out
    }

    fn step_random_effects(&mut self) {
        let xi = self.state.xi;
        let kf = self.k as f64;
        let v = 1.0 / (1.0 + kf * xi * xi);
        let sd = v.sqrt();
        let sig: Vec<f64> = self.state.sigma2.iter().map(|s| s.sqrt()).collect();
        for i in 0..self.n {
            let ui = self.state.u[i];
            let mut acc = 0.0;
            for k in 0..self.k {
                let rp = self.resid[k][i] + xi * sig[k] * ui;
                self.resid[k][i] = rp;
                acc += xi * rp / sig[k];
            }
            let z: f64 = self.rng.sample(StandardNormal);
            self.state.u[i] = v * acc + sd * z;
        }
        if self.model.spec.orthogonalize_random_effects {
            let cols = self.fixed_effect_columns();
            let q = orthonormal_columns(&cols, 1e-10);
            project_out(&q, &mut self.state.u);
        }
        for k in 0..self.k {
            for i in 0..self.n {
                self.resid[k][i] -= xi * sig[k] * self.state.u[i];
            }
        }
    }

    /// Sums (A_k, B_k, U) of the residuals with the random-effect term removed.
    fn random_effect_sums(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let xi = self.state.xi;
        let u = &self.state.u;
        let uu = u.norm_squared();
        let mut a = vec![0.0; self.k];
        let mut b = vec![0.0; self.k];
        for k in 0..self.k {
            let sig = self.state.sigma2[k].sqrt();
            for i in 0..self.n {
                let rp = self.resid[k][i] + xi * sig * u[i];
                a[k] += rp * rp;
                b[k] += rp * u[i];
            }
        }
        (a, b, uu)
    }

    fn shift_random_effect(&mut self, old_scale: &[f64], new_scale: &[f64]) {
        for k in 0..self.k {
            let delta = old_scale[k] - new_scale[k];
            if delta == 0.0 {
                continue;
            }
            for i in 0..self.n {
                self.resid[k][i] += delta * self.state.u[i];
            }
        }
    }

    fn step_xi(&mut self) {
        let h = &self.model.spec.hyper;
        let (a, b, uu) = self.random_effect_sums();
        let sig: Vec<f64> = self.state.sigma2.iter().map(|s| s.sqrt()).collect();
        let s2 = &self.state.sigma2;
        let target = |xi: f64| {
            let mut ll = 0.0;
            for k in 0..a.len() {
                ll += (a[k] - 2.0 * xi * sig[k] * b[k] + xi * xi * s2[k] * uu) / s2[k];
            }
            -(h.a_xi + 1.0) * xi.ln() - h.b_xi / xi - 0.5 * ll + xi.ln()
        };
        let cur = self.state.xi;
        let z: f64 = self.rng.sample(StandardNormal);
        let prop = cur * (h.rw_sd * z).exp();
        let accept = prop > 0.0 && prop.is_finite() && self.rng.random::<f64>().ln() < target(prop) - target(cur);
        self.diagnostics.xi.record(accept);
        if accept {
            let old: Vec<f64> = sig.iter().map(|s| cur * s).collect();
            let new: Vec<f64> = sig.iter().map(|s| prop * s).collect();
            self.state.xi = prop;
            self.shift_random_effect(&old, &new);
        }
    }

    fn step_sigma2(&mut self) {
        let h = self.model.spec.hyper.clone();
        let nf = self.n as f64;
        let (a, b, uu) = self.random_effect_sums();
        let xi = self.state.xi;
        for k in 0..self.k {
            let target = |s: f64| {
                let sd = s.sqrt();
                let ssr = a[k] - 2.0 * xi * sd * b[k] + xi * xi * s * uu;
                -(h.a_sigma + 1.0) * s.ln() - h.b_sigma / s - 0.5 * nf * s.ln() - 0.5 * ssr / s + s.ln()
            };
            let cur = self.state.sigma2[k];
            let z: f64 = self.rng.sample(StandardNormal);
            let prop = cur * (h.rw_sd * z).exp();
            let accept = prop > 0.0 && prop.is_finite() && self.rng.random::<f64>().ln() < target(prop) - target(cur);
            self.diagnostics.sigma2.record(accept);
            if accept {
                let delta = xi * (cur.sqrt() - prop.sqrt());
                for i in 0..self.n {
                    self.resid[k][i] += delta * self.state.u[i];
                }
                self.state.sigma2[k] = prop;
            }
        }
    }

    fn step_fixed_effects(&mut self, intercepts: bool, covariates: bool) {
        let nf = self.n as f64;
        for k in 0..self.k {
            let s2 = self.state.sigma2[k];
            if intercepts {
                let old = self.state.beta0[k];
                let mean = self.resid[k].iter().sum::<f64>() / nf + old;
                let z: f64 = self.rng.sample(StandardNormal);
                let new = mean + (s2 / nf).sqrt() * z;
                for r in self.resid[k].iter_mut() {
                    *r += old - new;
                }
                self.state.beta0[k] = new;
            }
            if covariates {
                if let Some(ch) = &self.ztz_chol {
                    let old: DVector<f64> = self.state.beta_z.row(k).transpose();
                    let mut e = DVector::from_column_slice(&self.resid[k]);
                    e += &self.z * &old;
                    let mean = ch.solve(&self.z.tr_mul(&e));
                    let zdraw = std_normal_vec(mean.len(), &mut self.rng);
                    let dev = ch.l().transpose().solve_upper_triangular(&zdraw).unwrap_or_else(|| DVector::zeros(mean.len()));
                    let new = mean + dev * s2.sqrt();
                    let fitted = &self.z * &new;
                    for i in 0..self.n {
                        self.resid[k][i] = e[i] - fitted[i];
                    }
                    self.state.beta_z.set_row(k, &new.transpose());
                }
            }
        }
    }

    /// Pointwise Gaussian log densities at the current state (n x K).
    pub fn pointwise_loglik(&self) -> DMatrix<f64> {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        DMatrix::from_fn(self.n, self.k, |i, k| {
            let s2 = self.state.sigma2[k];
            let r = self.resid[k][i];
            -0.5 * (ln2pi + s2.ln()) - 0.5 * r * r / s2
        })
    }

    /// Unnormalized log posterior (up to constants that do not depend on
    /// the parameters).
    pub fn log_posterior(&self) -> f64 {
        let h = &self.model.spec.hyper;
        let s = &self.state;
        let mut lp = self.pointwise_loglik().sum();
        lp += s.cluster.log_indicator_prior();
        lp += -0.5 * s.u.norm_squared();
        lp += -(h.a_xi + 1.0) * s.xi.ln() - h.b_xi / s.xi;
        for v in s.sigma2.iter() {
            lp += -(h.a_sigma + 1.0) * v.ln() - h.b_sigma / v;
        }
        lp += (h.a_lambda_beta - 1.0) * s.lambda_beta.ln() - h.b_lambda_beta * s.lambda_beta;
        lp += (h.a_lambda_theta - 1.0) * s.lambda_theta.ln() - h.b_lambda_theta * s.lambda_theta;
        let prior = self.atom_prior_precision();
        for b in &s.cluster.beta_atoms {
            lp += -0.5 * (b.transpose() * &prior * b)[(0, 0)];
        }
        for t in &s.cluster.theta_atoms {
            lp += -0.5 * s.lambda_theta * (t.transpose() * &self.theta_q * t)[(0, 0)];
        }
        if s.cluster.mode != IndicatorMode::Fixed {
            lp += (h.a_beta - 1.0) * s.cluster.alpha_beta.ln() - h.b_beta * s.cluster.alpha_beta;
            for l1m in s.cluster.log1m_v(Side::Beta) {
                lp += (s.cluster.alpha_beta - 1.0) * l1m + s.cluster.alpha_beta.ln();
            }
        }
        if s.cluster.mode == IndicatorMode::Joint {
            lp += (h.a_theta - 1.0) * s.cluster.alpha_theta.ln() - h.b_theta * s.cluster.alpha_theta;
            lp += (h.a_rho - 1.0) * s.cluster.rho.ln() - h.b_rho * s.cluster.rho;
        }
        lp
    }

    /// Check the sphere and sign invariants of the index-weight atoms.
    pub fn check_state(&self) -> Result<()> {
        self.state.cluster.check_invariants()?;
        if self.model.spec.has_theta() {
            let polar = self.model.polar();
            for t in &self.state.cluster.theta_atoms {
                if (t.norm() - 1.0).abs() > 1e-10 {
                    return Err(Error::Numerical("index weights left the unit sphere".into()));
                }
                if polar && t[t.len() - 1] < 0.0 {
                    return Err(Error::Numerical("polar sign convention violated".into()));
                }
            }
        }
        let s = &self.state;
        if !(s.xi >= 0.0 && s.lambda_beta > 0.0 && s.lambda_theta > 0.0 && s.sigma2.iter().all(|v| *v > 0.0)) {
            return Err(Error::Numerical("variance parameter left its domain".into()));
        }
        Ok(())
    }

    /// Run `n_iter` sweeps and keep every `thin`-th state after `burn_in`.
    pub fn run(mut self, n_iter: usize, burn_in: usize, thin: usize, seed: u64) -> Result<ChainOutput> {
        if thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if burn_in > n_iter {
            return Err(Error::InvalidArgument("burn_in exceeds n_iter".into()));
        }
        let n_draws = (n_iter - burn_in) / thin;
        let mut draws = Vec::with_capacity(n_draws);
        let mut loglik = Vec::with_capacity(n_draws);
        for it in 1..=n_iter {
            if let Err(e) = self.sweep() {
                log::error!(
                    "sweep {it} failed: {e}; state: xi={} lambda_beta={} lambda_theta={} sigma2={:?}",
                    self.state.xi,
                    self.state.lambda_beta,
                    self.state.lambda_theta,
                    self.state.sigma2.as_slice()
                );
                return Err(e);
            }
            if cfg!(debug_assertions) {
                self.check_state()?;
            }
            if it > burn_in && (it - burn_in) % thin == 0 {
                self.refresh();
                self.check_state()?;
                let lp = self.log_posterior();
                if !lp.is_finite() {
                    return Err(Error::Numerical(format!("log posterior is not finite at sweep {it}")));
                }
                draws.push(self.state.clone());
                loglik.push(self.pointwise_loglik());
            }
        }
        let meta = ChainMeta {
            seed,
            n_iter,
            burn_in,
            thin,
            spec_hash: self.model.spec.spec_hash(),
            n_draws: draws.len(),
        };
        Ok(ChainOutput { draws, loglik, meta, model: self.model, diagnostics: self.diagnostics })
    }
}

/// Build a sampler from a validated spec and dataset and run one chain.
pub fn run_chain(
    spec: &ModelSpec,
    data: &Dataset,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<ChainOutput> {
    Sampler::new(spec, data, seed)?.run(n_iter, burn_in, thin, seed)
}

/// log of prod_c |lambda S + eps I|^(1/2) / |lambda S|_+^(1/2) over the C atoms.
fn ridge_log_weight(eigs: &[f64], eps: f64, c: f64, lambda: f64) -> f64 {
    let s: f64 = eigs.iter().filter(|v| **v > 0.0).map(|v| (eps / (lambda * v)).ln_1p()).sum();
    0.5 * c * s
}

/// One univariate slice-sampling transition (stepping out, then shrinkage).
fn slice_step<F: Fn(f64) -> f64, R: Rng + ?Sized>(x0: f64, width: f64, log_f: &F, rng: &mut R) -> f64 {
    let f0 = log_f(x0);
    if !f0.is_finite() {
        return x0;
    }
    let level = f0 + (1.0 - rng.random::<f64>()).ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    for _ in 0..60 {
        if log_f(lo) <= level {
            break;
        }
        lo -= width;
    }
    for _ in 0..60 {
        if log_f(hi) <= level {
            break;
        }
        hi += width;
    }
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if log_f(x) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-12 {
            return x0;
        }
    }
}
