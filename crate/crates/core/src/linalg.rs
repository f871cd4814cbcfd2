//! Small dense linear-algebra helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Symmetrize in place: (A + A') / 2.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Cholesky factorization, retrying with a growing ridge if the matrix is not
/// numerically positive definite. Returns the factor and the ridge that was used.
pub fn cholesky_jitter(p: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = p.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let n = p.nrows();
    let scale = (0..n).map(|i| p[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 1e-8;
    for _ in 0..12 {
        let mut q = p.clone();
        for i in 0..n {
            q[(i, i)] += ridge * scale;
        }
        if let Some(ch) = q.cholesky() {
            log::warn!("precision matrix not positive definite; added ridge {:.1e}", ridge * scale);
            return Ok((ch, ridge * scale));
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical("precision matrix is not positive definite".into()))
}

/// Draw from N(P^{-1} b, P^{-1}) given the precision P and the linear term b.
pub fn sample_gaussian_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (ch, _) = cholesky_jitter(precision)?;
    let mean = ch.solve(b);
    let z = std_normal_vec(b.len(), rng);
    let lt = ch.l().transpose();
    let dev = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(mean + dev)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Numerical rank of a symmetric PSD matrix, relative tolerance on the spectrum.
pub fn psd_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let (vals, _) = sym_eigen_sorted(a);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return 0;
    }
    vals.iter().filter(|v| **v > rel_tol * top).count()
}

/// Replace eigenvalues below `rel_tol * max` by exact zeros. Returns the cleaned
/// matrix, its eigenvalues (ascending, cleaned) and eigenvectors.
pub fn clean_psd(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (mut vals, vecs) = sym_eigen_sorted(a);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in vals.iter_mut() {
        if *v <= rel_tol * top {
            *v = 0.0;
        }
    }
    let cleaned = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
    let mut cleaned = cleaned;
    symmetrize(&mut cleaned);
    (cleaned, vals, vecs)
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (vec![], vec![]);
    }
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let (vals, vecs) = sym_eigen_sorted(&j);
    let nodes = vals.iter().copied().collect();
    let weights = (0..n).map(|i| 2.0 * vecs[(0, i)] * vecs[(0, i)]).collect();
    (nodes, weights)
}

/// Orthonormal basis of the column space of `cols` by modified Gram-Schmidt with
/// one re-orthogonalization pass. Columns whose residual norm drops below
/// `rel_tol` times their original norm are skipped as dependent.
pub fn orthonormal_columns(cols: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = cols.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in 0..cols.ncols() {
        let mut v: DVector<f64> = cols.column(c).into_owned();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > rel_tol * norm0 {
            basis.push(v / nv);
        }
    }
    let mut out = DMatrix::zeros(n, basis.len());
    for (c, q) in basis.iter().enumerate() {
        out.set_column(c, q);
    }
    out
}

/// Remove the component of `u` lying in the span of the orthonormal columns `q`
/// (applied twice for numerical orthogonality).
pub fn project_out(q: &DMatrix<f64>, u: &mut DVector<f64>) {
    for _ in 0..2 {
        let coef = q.tr_mul(u);
        *u -= q * coef;
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}
