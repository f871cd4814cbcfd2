//! Evaluation of the fitted contributions F_kj for the two model families.

use nalgebra::{DMatrix, DVector};

use crate::model::IndexInputs;
use crate::splines::{CenteredBasis, MAX_DEGREE};

/// Local B-spline rows for all n observations at one index direction.
pub(crate) struct SparseDesign {
    pub first: Vec<u32>,
    /// n * (degree + 1) values
    pub vals: Vec<f64>,
}

pub(crate) struct IndexEngine {
    pub inputs: IndexInputs,
    pub basis: CenteredBasis,
    pub n_clusters: usize,
    cache: Vec<Option<SparseDesign>>,
    pub additive: bool,
}

impl IndexEngine {
    pub fn new(inputs: IndexInputs, basis: CenteredBasis, n_clusters: usize, additive: bool) -> Self {
        let j = inputs.j;
        IndexEngine { inputs, basis, n_clusters, cache: (0..j * n_clusters).map(|_| None).collect(), additive }
    }

    pub fn width(&self) -> usize {
        self.basis.basis.degree + 1
    }

    pub fn invalidate_theta(&mut self, c: usize) {
        for j in 0..self.inputs.j {
            self.cache[j * self.n_clusters + c] = None;
        }
    }

    pub fn invalidate_all(&mut self) {
        self.cache.iter_mut().for_each(|s| *s = None);
    }

    fn build(&self, j: usize, theta: &[f64]) -> SparseDesign {
        let n = self.inputs.n;
        let w = self.width();
        let mut first = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(n * w);
        let mut buf = [0.0; MAX_DEGREE + 1];
        for i in 0..n {
            let v = if self.additive { self.inputs.row(i, j)[0] } else { self.inputs.dot(i, j, theta) };
            let f = self.basis.basis.local(v, &mut buf);
            first.push(f as u32);
            vals.extend_from_slice(&buf[..w]);
        }
        SparseDesign { first, vals }
    }

    pub fn design(&mut self, j: usize, c: usize, theta: &[f64]) -> &SparseDesign {
        let key = if self.additive { j * self.n_clusters } else { j * self.n_clusters + c };
        if self.cache[key].is_none() {
            let d = self.build(j, theta);
            self.cache[key] = Some(d);
        }
        self.cache[key].as_ref().unwrap()
    }

    /// out_i = f(x~_ij' theta_c) for raw coefficients `gamma`.
    pub fn eval_into(&mut self, j: usize, c: usize, theta: &[f64], gamma: &[f64], out: &mut [f64]) {
        let w = self.width();
        let d = self.design(j, c, theta);
        for (i, o) in out.iter_mut().enumerate() {
            let f = d.first[i] as usize;
            let vals = &d.vals[i * w..(i + 1) * w];
            let mut s = 0.0;
            for r in 0..w {
                s += vals[r] * gamma[f + r];
            }
            *o = s;
        }
    }

    /// Add the raw (uncentred) design rows of (j, c) into `acc` (n x d).
    pub fn add_raw_design(&mut self, j: usize, c: usize, theta: &[f64], acc: &mut DMatrix<f64>) {
        let w = self.width();
        let d = self.design(j, c, theta);
        for i in 0..acc.nrows() {
            let f = d.first[i] as usize;
            for r in 0..w {
                acc[(i, f + r)] += d.vals[i * w + r];
            }
        }
    }

    /// Centred dense design of (j, c): n x d'.
    pub fn centred_design(&mut self, j: usize, c: usize, theta: &[f64]) -> DMatrix<f64> {
        let n = self.inputs.n;
        let mut raw = DMatrix::zeros(n, self.basis.basis.n_basis);
        self.add_raw_design(j, c, theta, &mut raw);
        raw * &self.basis.transform
    }
}

pub(crate) struct TensorEngine {
    /// J designs, n x D each
    pub designs: Vec<DMatrix<f64>>,
    /// gram[j * J + j'] = B_j' B_j'
    pub gram: Vec<DMatrix<f64>>,
}

impl TensorEngine {
    pub fn new(designs: Vec<DMatrix<f64>>) -> Self {
        let j = designs.len();
        let mut gram = Vec::with_capacity(j * j);
        for a in 0..j {
            for b in 0..j {
                gram.push(designs[a].transpose() * &designs[b]);
            }
        }
        TensorEngine { designs, gram }
    }

    pub fn eval_into(&self, j: usize, beta: &DVector<f64>, out: &mut [f64]) {
        let v = &self.designs[j] * beta;
        out.copy_from_slice(v.as_slice());
    }
}

pub(crate) enum Engine {
    Index(IndexEngine),
    Tensor(TensorEngine),
}

impl Engine {
    /// Evaluate pair contribution with beta atom coefficients `coef` (raw
    /// coefficients for index models, tensor coefficients otherwise) and
    /// theta atom `c_theta`.
    pub fn eval_into(&mut self, j: usize, c_theta: usize, theta: &[f64], coef: &DVector<f64>, out: &mut [f64]) {
        match self {
            Engine::Index(e) => e.eval_into(j, c_theta, theta, coef.as_slice(), out),
            Engine::Tensor(e) => e.eval_into(j, coef, out),
        }
    }

    pub fn invalidate_theta(&mut self, c: usize) {
        if let Engine::Index(e) = self {
            e.invalidate_theta(c);
        }
    }
}
