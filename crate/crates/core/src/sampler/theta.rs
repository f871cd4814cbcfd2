//! Index-weight atom updates: the polar-angle Metropolis scheme and the
//! linearized Fisher-Bingham draw.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::{Engine, Sampler};
use crate::coclustering::{sample_log_categorical, UpdateMethod};
use crate::error::Result;
use crate::linalg::sample_gaussian_canonical;
use crate::model::ThetaMethod;
use crate::sphere::{angles_to_unit, polar_log_jacobian, unit_to_angles, FisherBingham};

const U_EPS: f64 = 1e-12;

fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Second Beta parameter that puts the mode at `u` for first parameter `a`.
fn mode_matched_b(u: f64, a: f64) -> f64 {
    ((1.0 - u) * a + 2.0 * u - 1.0) / u
}

/// Pieces of the likelihood that the members of one theta atom see.
struct AtomContext {
    /// (k, j, raw spline coefficients) of every member pair
    members: Vec<(usize, usize, Vec<f64>)>,
    /// outcome -> partial residual with the member contributions added back
    partial: Vec<Option<Vec<f64>>>,
}

impl Sampler {
    fn atom_context(&self, c: usize) -> AtomContext {
        let pairs = self.state.cluster.z_theta.members(c);
        let mut partial: Vec<Option<Vec<f64>>> = vec![None; self.k];
        let mut members = Vec::with_capacity(pairs.len());
        for (k, j) in pairs {
            let zb = self.state.cluster.z_beta.get(k, j);
            members.push((k, j, self.coef[zb].as_slice().to_vec()));
            let e = partial[k].get_or_insert_with(|| self.resid[k].clone());
            for (ei, f) in e.iter_mut().zip(&self.fx[k * self.j + j]) {
                *ei += f;
            }
        }
        AtomContext { members, partial }
    }

    /// Member contributions at direction `theta`, one n-vector per member.
    fn member_fits(&self, ctx: &AtomContext, theta: &[f64]) -> Vec<Vec<f64>> {
        let Engine::Index(eng) = &self.engine else { unreachable!("theta atoms require an index model") };
        ctx.members
            .iter()
            .map(|(_, j, gamma)| {
                (0..self.n).map(|i| eng.basis.basis.value(gamma, eng.inputs.dot(i, *j, theta))).collect()
            })
            .collect()
    }

    fn atom_loglik(&self, ctx: &AtomContext, fits: &[Vec<f64>]) -> f64 {
        let mut ll = 0.0;
        for (k, part) in ctx.partial.iter().enumerate() {
            let Some(e) = part else { continue };
            let mut r = e.clone();
            for ((kk, _, _), f) in ctx.members.iter().zip(fits) {
                if *kk == k {
                    for (ri, fi) in r.iter_mut().zip(f) {
                        *ri -= fi;
                    }
                }
            }
            ll -= 0.5 * r.iter().map(|v| v * v).sum::<f64>() / self.state.sigma2[k];
        }
        ll
    }

    fn theta_log_prior(&self, theta: &DVector<f64>) -> f64 {
        let tau = self.model.spec.hyper.tau_theta;
        -0.5 * self.state.lambda_theta * (theta.transpose() * &self.theta_q * theta)[(0, 0)] + tau * theta.sum()
    }

    fn write_theta_atom(&mut self, c: usize, theta: DVector<f64>, ctx: &AtomContext, fits: Vec<Vec<f64>>) {
        self.state.cluster.theta_atoms[c] = theta;
        self.engine.invalidate_theta(c);
        for (k, part) in ctx.partial.iter().enumerate() {
            if let Some(e) = part {
                self.resid[k].copy_from_slice(e);
            }
        }
        for ((k, j, _), f) in ctx.members.iter().zip(fits) {
            for (ri, fi) in self.resid[*k].iter_mut().zip(&f) {
                *ri -= fi;
            }
            self.fx[k * self.j + j] = f;
        }
    }

    pub(super) fn step_theta_atoms(&mut self) -> Result<()> {
        let m = self.theta_q.nrows();
        let tau = self.model.spec.hyper.tau_theta;
        let polar = self.model.polar();
        let prior_a = &self.theta_q * (0.5 * self.state.lambda_theta);
        let prior = FisherBingham::new(&prior_a, &DVector::from_element(m, tau))?;
        for c in 0..self.c {
            self.diagnostics.theta_updates += 1;
            if self.state.cluster.z_theta.members(c).is_empty() {
                let t = prior.sample(polar, &mut self.rng);
                self.state.cluster.theta_atoms[c] = t;
                self.engine.invalidate_theta(c);
                continue;
            }
            let ctx = self.atom_context(c);
            let (theta, fits) = match self.model.spec.theta_update_method {
                ThetaMethod::Polar => self.polar_update(c, &ctx),
                ThetaMethod::FisherBinghamProjection => self.linearized_update(c, &ctx)?,
            };
            self.write_theta_atom(c, theta, &ctx, fits);
        }
        Ok(())
    }

    fn polar_target(&self, ctx: &AtomContext, phi: &[f64]) -> (f64, DVector<f64>, Vec<Vec<f64>>) {
        let theta = angles_to_unit(phi);
        let fits = self.member_fits(ctx, theta.as_slice());
        let t = self.atom_loglik(ctx, &fits) + self.theta_log_prior(&theta) + polar_log_jacobian(phi);
        (t, theta, fits)
    }

    /// One sweep over the polar angles of atom `c`.
    fn polar_update(&mut self, c: usize, ctx: &AtomContext) -> (DVector<f64>, Vec<Vec<f64>>) {
        let mut phi = unit_to_angles(&self.state.cluster.theta_atoms[c]);
        let (mut cur_t, mut cur_theta, mut cur_fits) = self.polar_target(ctx, &phi);
        let a = self.model.spec.hyper.angle_proposal_shape;
        for l in 0..phi.len() {
            match self.model.spec.hyper.angle_update {
                UpdateMethod::Metropolis => {
                    let u = ((phi[l] + PI / 2.0) / PI).clamp(U_EPS, 1.0 - U_EPS);
                    let b = mode_matched_b(u, a);
                    let draw = rand_distr::Beta::new(a, b).map(|d| self.rng.sample(d)).unwrap_or(u);
                    let u_new = draw.clamp(U_EPS, 1.0 - U_EPS);
                    let mut prop = phi.clone();
                    prop[l] = u_new * PI - PI / 2.0;
                    let (t, theta, fits) = self.polar_target(ctx, &prop);
                    let b_rev = mode_matched_b(u_new, a);
                    let log_ratio = t - cur_t + beta_ln_pdf(u, a, b_rev) - beta_ln_pdf(u_new, a, b);
                    let accept = log_ratio.is_finite() && self.rng.random::<f64>().ln() < log_ratio;
                    self.diagnostics.angles.record(accept);
                    if accept {
                        phi = prop;
                        cur_t = t;
                        cur_theta = theta;
                        cur_fits = fits;
                    }
                }
                UpdateMethod::Grid => {
                    let g = self.model.spec.hyper.gridsize.max(1);
                    let mut cands = Vec::with_capacity(g);
                    let mut logw = Vec::with_capacity(g);
                    for node in 0..g {
                        let mut prop = phi.clone();
                        prop[l] = -PI / 2.0 + PI * (node as f64 + 0.5) / g as f64;
                        let (t, theta, fits) = self.polar_target(ctx, &prop);
                        logw.push(t);
                        cands.push((prop, t, theta, fits));
                    }
                    let pick = sample_log_categorical(&logw, &mut self.rng);
                    let (p, t, theta, fits) = cands.swap_remove(pick);
                    self.diagnostics.angles.record(true);
                    phi = p;
                    cur_t = t;
                    cur_theta = theta;
                    cur_fits = fits;
                }
            }
        }
        let n = cur_theta.norm();
        (cur_theta / n, cur_fits)
    }

    /// Draw from the Fisher-Bingham full conditional of a first-order
    /// expansion of the index functions around the current direction.
    fn linearized_update(&mut self, c: usize, ctx: &AtomContext) -> Result<(DVector<f64>, Vec<Vec<f64>>)> {
        let m = self.theta_q.nrows();
        let cur = self.state.cluster.theta_atoms[c].clone();
        let mut precision = &self.theta_q * self.state.lambda_theta;
        let mut eta = DVector::from_element(m, self.model.spec.hyper.tau_theta);
        {
            let Engine::Index(eng) = &self.engine else { unreachable!("theta atoms require an index model") };
            for (k, part) in ctx.partial.iter().enumerate() {
                if part.is_none() {
                    continue;
                }
                let w = 1.0 / self.state.sigma2[k];
                let mut xhat = DMatrix::zeros(self.n, m);
                let mut yhat = DVector::from_column_slice(&self.resid[k]);
                for (kk, j, gamma) in &ctx.members {
                    if *kk != k {
                        continue;
                    }
                    for i in 0..self.n {
                        let row = eng.inputs.row(i, *j);
                        let v: f64 = row.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
                        let (_, slope) = eng.basis.basis.value_and_slope(gamma, v);
                        for (col, x) in row.iter().enumerate() {
                            xhat[(i, col)] += slope * x;
                        }
                        yhat[i] += slope * v;
                    }
                }
                precision += xhat.tr_mul(&xhat) * w;
                eta += xhat.tr_mul(&yhat) * w;
            }
        }
        crate::linalg::symmetrize(&mut precision);
        let mut draw = sample_gaussian_canonical(&precision, &eta, &mut self.rng)?;
        let mut norm = draw.norm();
        while !(norm > 0.0) {
            draw = sample_gaussian_canonical(&precision, &eta, &mut self.rng)?;
            norm = draw.norm();
        }
        let theta = draw / norm;
        let fits = self.member_fits(ctx, theta.as_slice());
        Ok((theta, fits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposal_mode_sits_at_current_value() {
        for &u in &[0.1, 0.37, 0.5, 0.9] {
            let a = 50.0;
            let b = mode_matched_b(u, a);
            let mode = (a - 1.0) / (a + b - 2.0);
            assert!((mode - u).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_density_integrates_to_one() {
        let (a, b) = (3.0, 4.5);
        let n = 20000;
        let s: f64 = (0..n).map(|i| beta_ln_pdf((i as f64 + 0.5) / n as f64, a, b).exp()).sum::<f64>() / n as f64;
        assert!((s - 1.0).abs() < 1e-6);
    }
}
