use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coclustering::ClusterState;
use crate::fitted::FittedModel;

/// Full parameter vector of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub cluster: ClusterState,
    pub beta0: DVector<f64>,
    /// K x q
    pub beta_z: DMatrix<f64>,
    pub u: DVector<f64>,
    pub xi: f64,
    pub sigma2: DVector<f64>,
    pub lambda_beta: f64,
    pub lambda_theta: f64,
}

impl ParamState {
    pub fn beta_atom(&self, k: usize, j: usize) -> &DVector<f64> {
        &self.cluster.beta_atoms[self.cluster.z_beta.get(k, j)]
    }

    pub fn theta_atom(&self, k: usize, j: usize) -> &DVector<f64> {
        &self.cluster.theta_atoms[self.cluster.z_theta.get(k, j)]
    }
}

/// Switches for the individual steps of a sweep. Disabled steps leave their
/// parameters at the current values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepControl {
    pub indicators: bool,
    pub sticks: bool,
    pub beta_atoms: bool,
    pub theta_atoms: bool,
    pub concentrations: bool,
    pub rho: bool,
    pub lambda_beta: bool,
    pub lambda_theta: bool,
    pub random_effects: bool,
    pub xi: bool,
    pub sigma2: bool,
    pub intercepts: bool,
    pub covariates: bool,
}

impl Default for SweepControl {
    fn default() -> Self {
        Self::all()
    }
}

impl SweepControl {
    pub fn all() -> Self {
        SweepControl {
            indicators: true,
            sticks: true,
            beta_atoms: true,
            theta_atoms: true,
            concentrations: true,
            rho: true,
            lambda_beta: true,
            lambda_theta: true,
            random_effects: true,
            xi: true,
            sigma2: true,
            intercepts: true,
            covariates: true,
        }
    }

    pub fn none() -> Self {
        SweepControl {
            indicators: false,
            sticks: false,
            beta_atoms: false,
            theta_atoms: false,
            concentrations: false,
            rho: false,
            lambda_beta: false,
            lambda_theta: false,
            random_effects: false,
            xi: false,
            sigma2: false,
            intercepts: false,
            covariates: false,
        }
    }
}

/// Proposal and acceptance counts of the Metropolis steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounter {
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptanceCounter {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sticks_beta: AcceptanceCounter,
    pub sticks_theta: AcceptanceCounter,
    pub rho: AcceptanceCounter,
    pub lambda_beta: AcceptanceCounter,
    pub lambda_theta: AcceptanceCounter,
    pub xi: AcceptanceCounter,
    pub sigma2: AcceptanceCounter,
    pub angles: AcceptanceCounter,
    /// Number of index-weight atom updates performed (prior refreshes included).
    pub theta_updates: u64,
    pub saddlepoint_failures: u64,
    pub sweeps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub spec_hash: String,
    pub n_draws: usize,
}

/// Thinned draws, pointwise log-likelihoods and everything needed to
/// evaluate the fitted surfaces afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub draws: Vec<ParamState>,
    /// One n x K matrix per draw.
    pub loglik: Vec<DMatrix<f64>>,
    pub meta: ChainMeta,
    pub model: FittedModel,
    pub diagnostics: Diagnostics,
}

impl ChainOutput {
    /// Concatenate chains fitted to the same model (draws in chain order).
    pub fn combine(chains: &[ChainOutput]) -> Option<ChainOutput> {
        let first = chains.first()?;
        let mut out = first.clone();
        for c in &chains[1..] {
            out.draws.extend(c.draws.iter().cloned());
            out.loglik.extend(c.loglik.iter().cloned());
        }
        out.meta.n_draws = out.draws.len();
        Some(out)
    }
}
