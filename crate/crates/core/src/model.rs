//! Structural model description, datasets and the catalogued special cases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coclustering::UpdateMethod;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::splines::{lag_precision, natural_spline_basis, SplineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dlnm,
    Mim,
    Additive,
    Biomarker,
    NonseparableDlnm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMethod {
    Polar,
    FisherBinghamProjection,
}

impl ThetaMethod {
    /// Polar angles mix poorly in high dimension; switch at m = 8.
    pub fn default_for(m: usize) -> Self {
        if m >= 8 {
            ThetaMethod::FisherBinghamProjection
        } else {
            ThetaMethod::Polar
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    /// Dirichlet-process clustering of atoms (coupled for beta and theta).
    #[default]
    Clustered,
    /// Every exposure-outcome pair keeps its own atoms.
    Unclustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub a_lambda_beta: f64,
    pub b_lambda_beta: f64,
    pub a_lambda_theta: f64,
    pub b_lambda_theta: f64,
    pub a_xi: f64,
    pub b_xi: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub tau_theta: f64,
    pub rw_sd: f64,
    pub gridsize: usize,
    /// Ridge added to the spline penalty so the atom prior is proper.
    pub null_precision: f64,
    /// Shape a_phi of the shifted Beta proposal for polar angles.
    pub angle_proposal_shape: f64,
    pub stick_update: UpdateMethod,
    pub angle_update: UpdateMethod,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a_beta: 1.0,
            b_beta: 1.0,
            a_theta: 1.0,
            b_theta: 1.0,
            a_rho: 1.0,
            b_rho: 1.0,
            a_lambda_beta: 1.0,
            b_lambda_beta: 1.0,
            a_lambda_theta: 1.0,
            b_lambda_theta: 0.001,
            a_xi: 0.01,
            b_xi: 0.01,
            a_sigma: 0.01,
            b_sigma: 0.01,
            tau_theta: 0.0,
            rw_sd: 1.0,
            gridsize: 10,
            null_precision: 1e-6,
            angle_proposal_shape: 50.0,
            stick_update: UpdateMethod::Metropolis,
            angle_update: UpdateMethod::Metropolis,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, method: ThetaMethod) -> Result<()> {
        let positive = [
            ("a_beta", self.a_beta),
            ("b_beta", self.b_beta),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("a_lambda_beta", self.a_lambda_beta),
            ("b_lambda_beta", self.b_lambda_beta),
            ("a_lambda_theta", self.a_lambda_theta),
            ("b_lambda_theta", self.b_lambda_theta),
            ("a_xi", self.a_xi),
            ("b_xi", self.b_xi),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("rw_sd", self.rw_sd),
            ("null_precision", self.null_precision),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.gridsize == 0 {
            return Err(Error::Config("gridsize must be positive".into()));
        }
        if !(self.angle_proposal_shape > 1.0) {
            return Err(Error::Config("angle_proposal_shape must exceed 1".into()));
        }
        if !self.tau_theta.is_finite() {
            return Err(Error::Config("tau_theta must be finite".into()));
        }
        if method == ThetaMethod::Polar && self.tau_theta != 0.0 {
            return Err(Error::Config("tau_theta must be 0 with the polar theta update".into()));
        }
        Ok(())
    }
}

fn ser_mats<S: serde::Serializer>(v: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Vec<f64>>> = v
        .iter()
        .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
        .collect();
    rows.serialize(s)
}

fn de_mats<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<DMatrix<f64>>, D::Error> {
    let rows: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
    rows.into_iter()
        .map(|m| rows_to_matrix(&m).map_err(serde::de::Error::custom))
        .collect()
}

fn ser_opt_mat<S: serde::Serializer>(v: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_ref()
        .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
        .serialize(s)
}

fn de_opt_mat<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
    let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
    rows.map(|m| rows_to_matrix(&m).map_err(serde::de::Error::custom)).transpose()
}

/// Build a matrix from row vectors.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return dim_err("ragged matrix rows");
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_outcomes: usize,
    pub n_indices: usize,
    pub exposure_dim: usize,
    /// J matrices A_j, each r x M.
    #[serde(serialize_with = "ser_mats", deserialize_with = "de_mats")]
    pub index_designs: Vec<DMatrix<f64>>,
    /// r x m with orthonormal columns; `None` is the identity.
    #[serde(serialize_with = "ser_opt_mat", deserialize_with = "de_opt_mat")]
    pub reduction_basis: Option<DMatrix<f64>>,
    pub spline: SplineConfig,
    pub truncation: usize,
    pub hyper: HyperParams,
    pub theta_update_method: ThetaMethod,
    pub orthogonalize_random_effects: bool,
    pub model_kind: ModelKind,
    pub clustering: ClusteringMode,
    /// Order s of the lag difference penalty (lagged kinds only).
    pub lag_diff_order: usize,
}

impl ModelSpec {
    /// Rows r of each A_j.
    pub fn index_dim(&self) -> usize {
        self.index_designs.first().map_or(0, |a| a.nrows())
    }

    /// Length m of each index-weight vector.
    pub fn theta_dim(&self) -> usize {
        match &self.reduction_basis {
            Some(psi) => psi.ncols(),
            None => self.index_dim(),
        }
    }

    pub fn psi(&self) -> DMatrix<f64> {
        self.reduction_basis.clone().unwrap_or_else(|| DMatrix::identity(self.index_dim(), self.index_dim()))
    }

    pub fn has_theta(&self) -> bool {
        !matches!(self.model_kind, ModelKind::Additive | ModelKind::NonseparableDlnm)
    }

    /// Set the number of outcomes and reset the truncation to K * J.
    pub fn with_outcomes(mut self, k: usize) -> Self {
        self.n_outcomes = k;
        self.truncation = k * self.n_indices;
        self
    }

    pub fn with_truncation(mut self, c: usize) -> Self {
        self.truncation = c;
        self
    }

    pub fn with_theta_method(mut self, m: ThetaMethod) -> Self {
        self.theta_update_method = m;
        self
    }

    pub fn with_clustering(mut self, c: ClusteringMode) -> Self {
        self.clustering = c;
        self
    }

    /// Number of atoms actually used by the sampler.
    pub fn effective_truncation(&self) -> usize {
        match self.clustering {
            ClusteringMode::Clustered => self.truncation,
            ClusteringMode::Unclustered => self.n_outcomes * self.n_indices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_outcomes == 0 || self.n_indices == 0 || self.exposure_dim == 0 {
            return arg_err("K, J and M must be positive");
        }
        if self.index_designs.len() != self.n_indices {
            return dim_err(format!("{} index designs for J = {}", self.index_designs.len(), self.n_indices));
        }
        let r = self.index_dim();
        if r == 0 {
            return dim_err("index designs have no rows");
        }
        for (j, a) in self.index_designs.iter().enumerate() {
            if a.nrows() != r || a.ncols() != self.exposure_dim {
                return dim_err(format!(
                    "A_{} is {}x{}, expected {}x{}",
                    j + 1,
                    a.nrows(),
                    a.ncols(),
                    r,
                    self.exposure_dim
                ));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return arg_err(format!("A_{} has non-finite entries", j + 1));
            }
        }
        if let Some(psi) = &self.reduction_basis {
            if psi.nrows() != r {
                return dim_err(format!("Psi has {} rows, expected {}", psi.nrows(), r));
            }
            let g = psi.transpose() * psi;
            if (g - DMatrix::identity(psi.ncols(), psi.ncols())).amax() > 1e-10 {
                return arg_err("Psi columns are not orthonormal");
            }
        }
        if self.truncation == 0 {
            return arg_err("truncation C must be at least 1");
        }
        self.spline.validate()?;
        if self.model_kind == ModelKind::Additive && r != 1 {
            return dim_err("additive designs must have a single row");
        }
        if matches!(self.model_kind, ModelKind::Dlnm | ModelKind::NonseparableDlnm)
            && (self.lag_diff_order == 0 || self.lag_diff_order >= r)
        {
            return arg_err(format!("lag difference order {} must lie in 1..{}", self.lag_diff_order, r));
        }
        if self.model_kind == ModelKind::NonseparableDlnm && self.spline.degree < 2 {
            return arg_err("the nonseparable model needs a spline degree of at least 2");
        }
        self.hyper.validate(self.theta_update_method)?;
        Ok(())
    }

    /// Precision-form matrix of the index-weight prior (m x m).
    pub fn theta_prior_matrix(&self) -> Result<DMatrix<f64>> {
        let m = self.theta_dim();
        match self.model_kind {
            ModelKind::Dlnm | ModelKind::NonseparableDlnm => {
                lag_precision(self.index_dim(), self.lag_diff_order, &self.psi())
            }
            ModelKind::Mim | ModelKind::Biomarker => Ok(DMatrix::identity(m, m)),
            ModelKind::Additive => Ok(DMatrix::zeros(1, 1)),
        }
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn spec_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn block_selector(block_rows: usize, n_blocks: usize, j: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(block_rows, block_rows * n_blocks);
    for l in 0..block_rows {
        a[(l, j * block_rows + l)] = 1.0;
    }
    a
}

fn base_spec(kind: ModelKind, designs: Vec<DMatrix<f64>>, psi: Option<DMatrix<f64>>, m: usize) -> ModelSpec {
    let j = designs.len();
    let exposure_dim = designs[0].ncols();
    let r = designs[0].nrows();
    ModelSpec {
        n_outcomes: 1,
        n_indices: j,
        exposure_dim,
        index_designs: designs,
        reduction_basis: psi,
        spline: SplineConfig::default(),
        truncation: j,
        hyper: HyperParams::default(),
        theta_update_method: ThetaMethod::default_for(m),
        orthogonalize_random_effects: false,
        model_kind: kind,
        clustering: ClusteringMode::Clustered,
        lag_diff_order: 2.min(r.saturating_sub(1)).max(1),
    }
}

/// Multivariate distributed-lag spec: P exposures observed at L lags.
pub fn build_dlnm_spec(p: usize, l: usize, m: Option<usize>) -> Result<ModelSpec> {
    if p == 0 {
        return arg_err("P must be at least 1");
    }
    if l < 2 {
        return arg_err(format!("L must be at least 2, got {l}"));
    }
    let psi = match m {
        Some(m) if m > l => return arg_err(format!("basis dimension m={m} exceeds L={l}")),
        Some(m) => Some(natural_spline_basis(l, m)?),
        None => None,
    };
    let designs = (0..p).map(|j| block_selector(l, p, j)).collect();
    Ok(base_spec(ModelKind::Dlnm, designs, psi, m.unwrap_or(l)))
}

/// Multiple index model of maximum order J over P cross-sectional exposures.
pub fn build_mim_spec(p: usize, j: usize) -> Result<ModelSpec> {
    if p < 2 {
        return arg_err(format!("P must be at least 2, got {p}"));
    }
    if j == 0 {
        return arg_err("J must be at least 1");
    }
    let designs = vec![DMatrix::identity(p, p); j];
    Ok(base_spec(ModelKind::Mim, designs, None, p))
}

/// Additive model: one smooth per exposure, weights fixed at 1.
pub fn build_additive_spec(p: usize) -> Result<ModelSpec> {
    if p == 0 {
        return arg_err("P must be at least 1");
    }
    let designs = (0..p)
        .map(|j| {
            let mut a = DMatrix::zeros(1, p);
            a[(0, j)] = 1.0;
            a
        })
        .collect();
    let mut spec = base_spec(ModelKind::Additive, designs, None, 1);
    spec.theta_update_method = ThetaMethod::Polar;
    Ok(spec)
}

/// P exposures each measured in B biomarkers; ridge prior on the weights.
pub fn build_biomarker_spec(p: usize, b: usize) -> Result<ModelSpec> {
    if p == 0 || b == 0 {
        return arg_err("P and B must be positive");
    }
    let designs = (0..p).map(|j| block_selector(b, p, j)).collect();
    Ok(base_spec(ModelKind::Biomarker, designs, None, b))
}

/// Tensor-product (dose x lag) distributed-lag spec with an m-column lag basis.
pub fn build_nonseparable_spec(p: usize, l: usize, m: Option<usize>) -> Result<ModelSpec> {
    let mut spec = build_dlnm_spec(p, l, m)?;
    spec.model_kind = ModelKind::NonseparableDlnm;
    spec.theta_update_method = ThetaMethod::Polar;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub xstar: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub outcome_names: Vec<String>,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, xstar: DMatrix<f64>, z: Option<DMatrix<f64>>) -> Result<Self> {
        let n = y.nrows();
        let z = z.unwrap_or_else(|| DMatrix::zeros(n, 0));
        let ds = Dataset {
            outcome_names: (1..=y.ncols()).map(|k| format!("y{k}")).collect(),
            exposure_names: (1..=xstar.ncols()).map(|m| format!("x{m}")).collect(),
            covariate_names: (1..=z.ncols()).map(|q| format!("z{q}")).collect(),
            y,
            xstar,
            z,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_outcomes(&self) -> usize {
        self.y.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.nrows();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {n}")));
        }
        if self.y.ncols() == 0 {
            return Err(Error::Data("no outcome columns".into()));
        }
        if self.xstar.nrows() != n || self.z.nrows() != n {
            return Err(Error::Data("outcome, exposure and covariate matrices differ in rows".into()));
        }
        for (name, m) in [("outcome", &self.y), ("exposure", &self.xstar), ("covariate", &self.z)] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                let (r, c) = (pos % m.nrows(), pos / m.nrows());
                return Err(Error::Data(format!("missing or non-finite {name} value at row {}, column {}", r + 1, c + 1)));
            }
        }
        if self.outcome_names.len() != self.y.ncols()
            || self.exposure_names.len() != self.xstar.ncols()
            || self.covariate_names.len() != self.z.ncols()
        {
            return Err(Error::Data("column labels do not match matrix widths".into()));
        }
        Ok(())
    }

    /// Keep only the listed outcome columns.
    pub fn select_outcomes(&self, ks: &[usize]) -> Dataset {
        let y = DMatrix::from_fn(self.n(), ks.len(), |i, c| self.y[(i, ks[c])]);
        Dataset {
            y,
            xstar: self.xstar.clone(),
            z: self.z.clone(),
            outcome_names: ks.iter().map(|&k| self.outcome_names[k].clone()).collect(),
            exposure_names: self.exposure_names.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Check that a dataset conforms to a spec.
pub fn check_conformity(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    spec.validate()?;
    data.validate()?;
    if data.y.ncols() != spec.n_outcomes {
        return dim_err(format!("data has {} outcomes, spec expects {}", data.y.ncols(), spec.n_outcomes));
    }
    if data.xstar.ncols() != spec.exposure_dim {
        return dim_err(format!(
            "data has {} exposure columns, spec expects {}",
            data.xstar.ncols(),
            spec.exposure_dim
        ));
    }
    let q = data.z.ncols();
    if q > 0 {
        let n = data.n();
        let mut zz = DMatrix::zeros(n, q + 1);
        zz.column_mut(0).fill(1.0);
        zz.columns_mut(1, q).copy_from(&data.z);
        let g = zz.transpose() * &zz;
        let (vals, _) = crate::linalg::sym_eigen_sorted(&g);
        if vals[0] <= 1e-10 * vals[q].max(1.0) {
            return Err(Error::Data("covariates are collinear (with each other or the intercept)".into()));
        }
    }
    Ok(())
}

/// Per-observation, per-index inputs x~_ij = Psi' A_j x*_i, stored [i][j][.].
#[derive(Debug, Clone, PartialEq)]
pub struct IndexInputs {
    pub n: usize,
    pub j: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl IndexInputs {
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.j + j) * self.m;
        &self.data[start..start + self.m]
    }

    #[inline]
    pub fn dot(&self, i: usize, j: usize, theta: &[f64]) -> f64 {
        self.row(i, j).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    /// Largest Euclidean norm over all (i, j).
    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks(self.m.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// A_j x*_i for every i and j (no dimension reduction).
pub fn exposure_blocks(spec: &ModelSpec, xstar: &DMatrix<f64>) -> Result<IndexInputs> {
    if xstar.ncols() != spec.exposure_dim {
        return dim_err(format!("X* has {} columns, spec expects {}", xstar.ncols(), spec.exposure_dim));
    }
    let n = xstar.nrows();
    let r = spec.index_dim();
    let mut data = Vec::with_capacity(n * spec.n_indices * r);
    for i in 0..n {
        let xi: DVector<f64> = xstar.row(i).transpose();
        for a in &spec.index_designs {
            data.extend((a * &xi).iter());
        }
    }
    Ok(IndexInputs { n, j: spec.n_indices, m: r, data })
}

pub fn compute_index_inputs(spec: &ModelSpec, xstar: &DMatrix<f64>) -> Result<IndexInputs> {
    if xstar.ncols() != spec.exposure_dim {
        return dim_err(format!("X* has {} columns, spec expects {}", xstar.ncols(), spec.exposure_dim));
    }
    let n = xstar.nrows();
    let m = spec.theta_dim();
    let mut data = Vec::with_capacity(n * spec.n_indices * m);
    let maps: Vec<DMatrix<f64>> = match &spec.reduction_basis {
        Some(psi) => spec.index_designs.iter().map(|a| psi.transpose() * a).collect(),
        None => spec.index_designs.clone(),
    };
    for i in 0..n {
        let xi: DVector<f64> = xstar.row(i).transpose();
        for map in &maps {
            data.extend((map * &xi).iter());
        }
    }
    Ok(IndexInputs { n, j: spec.n_indices, m, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dlnm_selectors() {
        let s = build_dlnm_spec(2, 3, None).unwrap();
        let mut a1 = DMatrix::zeros(3, 6);
        a1.view_mut((0, 0), (3, 3)).fill_with_identity();
        let mut a2 = DMatrix::zeros(3, 6);
        a2.view_mut((0, 3), (3, 3)).fill_with_identity();
        assert_eq!(s.index_designs, vec![a1, a2]);
        let s = build_dlnm_spec(1, 2, None).unwrap();
        assert_eq!(s.index_designs[0], DMatrix::identity(2, 2));
        let s = build_dlnm_spec(5, 52, Some(6)).unwrap();
        let psi = s.reduction_basis.clone().unwrap();
        assert_eq!(psi.shape(), (52, 6));
        assert!((psi.transpose() * &psi - DMatrix::identity(6, 6)).amax() < 1e-10);
        assert!(build_dlnm_spec(2, 3, Some(4)).is_err());
        assert!(build_dlnm_spec(2, 1, None).is_err());
    }

    #[test]
    fn mim_and_additive() {
        let s = build_mim_spec(10, 3).unwrap();
        assert!(s.index_designs.iter().all(|a| *a == DMatrix::identity(10, 10)));
        assert_eq!(s.model_kind, ModelKind::Mim);
        assert!(build_mim_spec(1, 1).is_err());
        let s = build_additive_spec(3).unwrap();
        assert_eq!(s.index_designs[1], DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]));
        assert!(!s.has_theta());
    }

    #[test]
    fn index_inputs_examples() {
        let s = build_mim_spec(2, 1).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        assert_eq!(compute_index_inputs(&s, &x).unwrap().row(0, 0), &[3.0, -1.0]);
        let s = build_dlnm_spec(2, 2, None).unwrap();
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let t = compute_index_inputs(&s, &x).unwrap();
        assert_eq!(t.row(0, 0), &[1.0, 2.0]);
        assert_eq!(t.row(0, 1), &[3.0, 4.0]);
        let bad = DMatrix::zeros(1, 3);
        assert!(compute_index_inputs(&s, &bad).is_err());
    }

    #[test]
    fn defaults_follow_the_documented_values() {
        let h = HyperParams::default();
        assert_eq!((h.a_lambda_theta, h.b_lambda_theta), (1.0, 0.001));
        assert_eq!((h.a_xi, h.b_xi, h.a_sigma, h.b_sigma), (0.01, 0.01, 0.01, 0.01));
        assert_eq!((h.rw_sd, h.gridsize), (1.0, 10));
        let mut bad = h.clone();
        bad.tau_theta = 1.0;
        assert!(bad.validate(ThetaMethod::Polar).is_err());
        assert!(bad.validate(ThetaMethod::FisherBinghamProjection).is_ok());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = build_dlnm_spec(2, 5, Some(3)).unwrap().with_outcomes(2);
        let js = serde_json::to_string(&s).unwrap();
        let back: ModelSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.spec_hash(), back.spec_hash());
        assert_eq!(s.truncation, 4);
    }

    #[test]
    fn dataset_rejects_missing_values() {
        let mut y = DMatrix::zeros(3, 1);
        y[(1, 0)] = f64::NAN;
        assert!(matches!(Dataset::new(y, DMatrix::zeros(3, 2), None), Err(Error::Data(_))));
        assert!(Dataset::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), None).is_err());
    }
}
