//! Tensor-product dose-lag surfaces: one clustered coefficient vector per
//! exposure-outcome pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::linalg::symmetrize;
use crate::model::{Dataset, ModelKind, ModelSpec};
use crate::sampler::{run_chain, ChainOutput};
use crate::splines::CenteredBasis;

/// Collapsed tensor row: entry a*m + b equals sum_l R[l, a] Psi[l, b].
pub fn tensor_design(r: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DVector<f64>> {
    if r.nrows() != psi.nrows() {
        return dim_err(format!("dose basis has {} rows, lag basis {}", r.nrows(), psi.nrows()));
    }
    let d = r.ncols();
    let m = psi.ncols();
    let prod = r.transpose() * psi;
    Ok(DVector::from_fn(d * m, |idx, _| prod[(idx / m, idx % m)]))
}

/// Kronecker sum S0 (x) I_m + I_d (x) S_theta.
pub fn tensor_penalty(s0: &DMatrix<f64>, s_theta: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s0.nrows();
    let m = s_theta.nrows();
    let mut out = s0.kronecker(&DMatrix::identity(m, m)) + DMatrix::identity(d, d).kronecker(s_theta);
    symmetrize(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasis {
    pub dose: CenteredBasis,
    /// L x m
    pub lag: DMatrix<f64>,
}

impl TensorBasis {
    pub fn dim(&self) -> usize {
        self.dose.dim() * self.lag.ncols()
    }

    /// Tensor row for one exposure history (length L).
    pub fn design(&self, x_lags: &[f64]) -> Result<DVector<f64>> {
        if x_lags.len() != self.lag.nrows() {
            return dim_err(format!("exposure history has {} lags, basis {}", x_lags.len(), self.lag.nrows()));
        }
        let r = self.dose.eval(x_lags);
        tensor_design(&r, &self.lag)
    }

    /// Value of the surface sum_l h(x_l, l) for coefficients `beta`.
    pub fn value(&self, beta: &DVector<f64>, x_lags: &[f64]) -> Result<f64> {
        Ok(self.design(x_lags)?.dot(beta))
    }

    /// h(x, l) at a single dose and lag (0-based).
    pub fn surface(&self, beta: &DVector<f64>, x: f64, lag: usize) -> f64 {
        let r = self.dose.eval(&[x]);
        let m = self.lag.ncols();
        let mut s = 0.0;
        for a in 0..r.ncols() {
            for b in 0..m {
                s += r[(0, a)] * self.lag[(lag, b)] * beta[a * m + b];
            }
        }
        s
    }
}

/// Fit the tensor-product model; `spec` must be of the nonseparable kind.
pub fn run_nonseparable_chain(
    spec: &ModelSpec,
    data: &Dataset,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<ChainOutput> {
    if spec.model_kind != ModelKind::NonseparableDlnm {
        return arg_err("run_nonseparable_chain needs a nonseparable_dlnm spec");
    }
    run_chain(spec, data, n_iter, burn_in, thin, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen_sorted;

    #[test]
    fn degenerate_tensor() {
        let r = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let psi = DMatrix::from_column_slice(3, 1, &[0.5, 0.5, 1.0]);
        let t = tensor_design(&r, &psi).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t[0] - 4.5).abs() < 1e-15);
    }

    #[test]
    fn matches_loop_oracle() {
        let r = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) as f64).sin());
        let psi = DMatrix::from_fn(6, 2, |i, j| ((i + 2 * j) as f64).cos());
        let t = tensor_design(&r, &psi).unwrap();
        for a in 0..3 {
            for b in 0..2 {
                let mut s = 0.0;
                for l in 0..6 {
                    s += r[(l, a)] * psi[(l, b)];
                }
                assert!((t[a * 2 + b] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kronecker_sum_spectrum() {
        assert_eq!(tensor_penalty(&DMatrix::identity(3, 3), &DMatrix::identity(2, 2)), DMatrix::identity(6, 6) * 2.0);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.5]);
        let (ea, _) = sym_eigen_sorted(&a);
        let (eb, _) = sym_eigen_sorted(&b);
        let mut sums: Vec<f64> = ea.iter().flat_map(|x| eb.iter().map(move |y| x + y)).collect();
        sums.sort_by(f64::total_cmp);
        let (e, _) = sym_eigen_sorted(&tensor_penalty(&a, &b));
        for (x, y) in e.iter().zip(&sums) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
