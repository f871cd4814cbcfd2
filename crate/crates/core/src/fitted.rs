//! Data-dependent pieces of a fitted model (knots, centring, lag basis) and
//! evaluation of the exposure-response surfaces for a given draw.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{check_conformity, compute_index_inputs, exposure_blocks, Dataset, ModelKind, ModelSpec, ThetaMethod};
use crate::nonseparable::TensorBasis;
use crate::sampler::ParamState;
use crate::splines::CenteredBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Basis of the index functions (dose basis for the tensor model).
    pub basis: CenteredBasis,
    pub tensor: Option<TensorBasis>,
    pub initial_theta: DVector<f64>,
    pub exposure_mean: Vec<f64>,
    pub exposure_sd: Vec<f64>,
}

/// Starting index weights: the normalized projection of a flat profile,
/// with a nonnegative last coordinate.
pub fn initial_theta(spec: &ModelSpec) -> DVector<f64> {
    let m = spec.theta_dim();
    let ones = DVector::from_element(spec.index_dim(), 1.0);
    let mut t = match &spec.reduction_basis {
        Some(psi) => psi.transpose() * ones,
        None => ones,
    };
    if t.norm() < 1e-12 {
        t = DVector::zeros(m);
        t[m - 1] = 1.0;
    }
    if t[m - 1] < 0.0 {
        t.neg_mut();
    }
    let n = t.norm();
    t / n
}

impl FittedModel {
    pub fn build(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        check_conformity(spec, data)?;
        let exposure_mean: Vec<f64> = data.xstar.column_iter().map(|c| c.mean()).collect();
        let exposure_sd: Vec<f64> = data
            .xstar
            .column_iter()
            .zip(&exposure_mean)
            .map(|(c, m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let theta0 = initial_theta(spec);
        if spec.model_kind == ModelKind::NonseparableDlnm {
            let blocks = exposure_blocks(spec, &data.xstar)?;
            let values = &blocks.data;
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::Data("exposures are constant".into()));
            }
            let mut cfg = spec.spline.clone();
            if cfg.knot_range.is_none() {
                cfg.knot_range = Some((lo, hi));
            }
            let dose = CenteredBasis::new(&cfg, values)?;
            let tensor = TensorBasis { dose: dose.clone(), lag: spec.psi() };
            return Ok(FittedModel {
                spec: spec.clone(),
                basis: dose,
                tensor: Some(tensor),
                initial_theta: theta0,
                exposure_mean,
                exposure_sd,
            });
        }
        let inputs = compute_index_inputs(spec, &data.xstar)?;
        let mut cfg = spec.spline.clone();
        if cfg.knot_range.is_none() {
            let r = inputs.max_norm();
            if !(r > 0.0) {
                return Err(Error::Data("all index inputs are zero".into()));
            }
            cfg.knot_range = Some((-r, r));
        }
        let theta_ref = if spec.model_kind == ModelKind::Additive { DVector::from_element(1, 1.0) } else { theta0.clone() };
        let refs: Vec<f64> = (0..inputs.n)
            .flat_map(|i| (0..inputs.j).map(move |j| (i, j)))
            .map(|(i, j)| inputs.dot(i, j, theta_ref.as_slice()))
            .collect();
        let basis = CenteredBasis::new(&cfg, &refs)?;
        Ok(FittedModel {
            spec: spec.clone(),
            basis,
            tensor: None,
            initial_theta: theta_ref,
            exposure_mean,
            exposure_sd,
        })
    }

    pub fn is_tensor(&self) -> bool {
        self.tensor.is_some()
    }

    /// Knot interval of the index basis.
    pub fn range(&self) -> (f64, f64) {
        (self.basis.basis.lo, self.basis.basis.hi)
    }

    /// x~_j = Psi' A_j x* for one exposure vector.
    pub fn index_input(&self, j: usize, xstar: &[f64]) -> Result<DVector<f64>> {
        if xstar.len() != self.spec.exposure_dim {
            return dim_err(format!("exposure vector has length {}, expected {}", xstar.len(), self.spec.exposure_dim));
        }
        let x = DVector::from_column_slice(xstar);
        let a = &self.spec.index_designs[j] * x;
        Ok(match &self.spec.reduction_basis {
            Some(psi) => psi.transpose() * a,
            None => a,
        })
    }

    /// Index value x~_j' theta_kj for a draw.
    pub fn index_value(&self, state: &ParamState, k: usize, j: usize, xstar: &[f64]) -> Result<f64> {
        let x = self.index_input(j, xstar)?;
        if self.spec.model_kind == ModelKind::Additive {
            return Ok(x[0]);
        }
        Ok(x.dot(state.theta_atom(k, j)))
    }

    /// f_kj evaluated at exposure vector x* under one draw (for the tensor
    /// model, the collapsed surface sum over lags).
    pub fn pair_effect(&self, state: &ParamState, k: usize, j: usize, xstar: &[f64]) -> Result<f64> {
        if let Some(t) = &self.tensor {
            if xstar.len() != self.spec.exposure_dim {
                return dim_err("exposure vector length mismatch");
            }
            let a = &self.spec.index_designs[j] * DVector::from_column_slice(xstar);
            return t.value(state.beta_atom(k, j), a.as_slice());
        }
        let v = self.index_value(state, k, j, xstar)?;
        Ok(self.basis.value(state.beta_atom(k, j), v))
    }

    /// f_kj at an index value directly.
    pub fn curve_value(&self, state: &ParamState, k: usize, j: usize, v: f64) -> f64 {
        self.basis.value(state.beta_atom(k, j), v)
    }

    /// Whether the theta atoms follow the hemisphere convention.
    pub fn polar(&self) -> bool {
        self.spec.theta_update_method == ThetaMethod::Polar
    }

    /// Lag-weight profile omega = Psi theta for pair (k, j) of a draw.
    pub fn weight_profile(&self, state: &ParamState, k: usize, j: usize) -> DVector<f64> {
        let t = state.theta_atom(k, j);
        match &self.spec.reduction_basis {
            Some(psi) if !self.is_tensor() => psi * t,
            _ => t.clone(),
        }
    }

    pub fn exposure_matrix_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.exposure_mean)
    }

    pub fn design_columns(&self) -> usize {
        self.basis.dim()
    }

    #[allow(dead_code)]
    pub(crate) fn tensor_designs(&self, data: &Dataset) -> Result<Vec<DMatrix<f64>>> {
        let t = self.tensor.as_ref().ok_or_else(|| Error::InvalidArgument("not a tensor model".into()))?;
        let blocks = exposure_blocks(&self.spec, &data.xstar)?;
        let mut out = Vec::with_capacity(blocks.j);
        for j in 0..blocks.j {
            let mut b = DMatrix::zeros(blocks.n, t.dim());
            for i in 0..blocks.n {
                let row = t.design(blocks.row(i, j))?;
                b.set_row(i, &row.transpose());
            }
            out.push(b);
        }
        Ok(out)
    }
}
