//! Forward simulation from the prior and the likelihood, used by joint
//! distribution tests of the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Sampler;
use crate::coclustering::{sample_gamma, sample_prior_indicators, IndicatorMode};
use crate::error::Result;
use crate::linalg::{sample_gaussian_canonical, std_normal_vec};
use crate::sphere::FisherBingham;

impl Sampler {
    /// Replace every parameter that has a proper prior by a prior draw.
    /// Intercepts and covariate effects (flat priors) keep their values.
    pub fn sample_prior_state(&mut self) -> Result<()> {
        let h = self.model.spec.hyper.clone();
        let rng = &mut self.rng;
        let s = &mut self.state;
        s.xi = 1.0 / sample_gamma(h.a_xi, h.b_xi, rng)?;
        for v in s.sigma2.iter_mut() {
            *v = 1.0 / sample_gamma(h.a_sigma, h.b_sigma, rng)?;
        }
        s.lambda_beta = sample_gamma(h.a_lambda_beta, h.b_lambda_beta, rng)?;
        s.lambda_theta = sample_gamma(h.a_lambda_theta, h.b_lambda_theta, rng)?;
        s.u = std_normal_vec(self.n, rng);
        let cl = &mut s.cluster;
        if cl.mode != IndicatorMode::Fixed {
            cl.alpha_beta = sample_gamma(h.a_beta, h.b_beta, rng)?;
            if cl.mode == IndicatorMode::Joint {
                cl.alpha_theta = sample_gamma(h.a_theta, h.b_theta, rng)?;
                cl.rho = sample_gamma(h.a_rho, h.b_rho, rng)?;
            }
            sample_prior_indicators(cl, rng)?;
        }
        let prior = self.atom_prior_precision();
        let zero = DVector::zeros(prior.nrows());
        for c in 0..self.c {
            self.state.cluster.beta_atoms[c] = sample_gaussian_canonical(&prior, &zero, &mut self.rng)?;
        }
        if self.model.spec.has_theta() {
            let m = self.theta_q.nrows();
            let a = &self.theta_q * (0.5 * self.state.lambda_theta);
            let fb = FisherBingham::new(&a, &DVector::from_element(m, h.tau_theta))?;
            let polar = self.model.polar();
            for c in 0..self.c {
                self.state.cluster.theta_atoms[c] = fb.sample(polar, &mut self.rng);
            }
        }
        self.engine_invalidate_all();
        self.log_c0_cache = None;
        self.refresh();
        Ok(())
    }

    /// Mean of the outcomes at the current state (random effect included).
    pub fn fitted_mean(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.k, |i, k| self.y[(i, k)] - self.resid[k][i])
    }

    /// Draw a fresh outcome matrix from the likelihood at the current state.
    pub fn simulate_outcomes(&mut self) -> DMatrix<f64> {
        let mean = self.fitted_mean();
        let mut y = mean;
        for k in 0..self.k {
            let sd = self.state.sigma2[k].sqrt();
            for i in 0..self.n {
                let e: f64 = self.rng.sample(StandardNormal);
                y[(i, k)] += sd * e;
            }
        }
        y
    }
}
