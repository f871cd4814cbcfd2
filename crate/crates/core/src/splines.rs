//! B-spline bases, sum-to-zero centring, roughness penalties and the lag
//! smoothness matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{gauss_legendre, symmetrize};

/// Largest supported spline degree (local evaluation uses stack buffers).
pub const MAX_DEGREE: usize = 7;
const MAXP1: usize = MAX_DEGREE + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    /// Equally spaced interior knots on a fixed interval.
    #[default]
    FixedRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineConfig {
    pub degree: usize,
    /// Number of basis functions before the centring constraint.
    pub n_basis: usize,
    /// `None` means "resolve from the data" (symmetric range ±R).
    pub knot_range: Option<(f64, f64)>,
    pub knot_rule: KnotRule,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { degree: 3, n_basis: 8, knot_range: None, knot_rule: KnotRule::FixedRange }
    }
}

impl SplineConfig {
    pub fn new(degree: usize, n_basis: usize, lo: f64, hi: f64) -> Self {
        SplineConfig { degree, n_basis, knot_range: Some((lo, hi)), knot_rule: KnotRule::FixedRange }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.knot_range = Some((lo, hi));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree > MAX_DEGREE {
            return arg_err(format!("spline degree {} exceeds {}", self.degree, MAX_DEGREE));
        }
        if self.n_basis < self.degree + 1 {
            return arg_err(format!(
                "n_basis {} must be at least degree + 1 = {}",
                self.n_basis,
                self.degree + 1
            ));
        }
        if let Some((lo, hi)) = self.knot_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return arg_err(format!("knot range ({lo}, {hi}) must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

/// Clamped B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub n_basis: usize,
    pub lo: f64,
    pub hi: f64,
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(cfg: &SplineConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = cfg
            .knot_range
            .ok_or_else(|| Error::InvalidArgument("spline knot range is unresolved".into()))?;
        let p = cfg.degree;
        let d = cfg.n_basis;
        let n_int = d - p - 1;
        let mut knots = Vec::with_capacity(d + p + 1);
        knots.extend(std::iter::repeat_n(lo, p + 1));
        for i in 1..=n_int {
            knots.push(lo + (hi - lo) * i as f64 / (n_int + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(hi, p + 1));
        Ok(BSplineBasis { degree: p, n_basis: d, lo, hi, knots })
    }

    pub fn config(&self) -> SplineConfig {
        SplineConfig::new(self.degree, self.n_basis, self.lo, self.hi)
    }

    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.lo, self.hi)
    }

    #[inline]
    fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let d = self.n_basis;
        if u >= self.knots[d] {
            return d - 1;
        }
        // knots[p..=d] are the distinct breakpoints; binary search the cell.
        let (mut low, mut high) = (p, d);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if u < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    }

    /// Nonzero basis values of degree `q <= degree` at `u` within `span`.
    #[inline]
    fn basis_funs(&self, span: usize, u: f64, q: usize, out: &mut [f64; MAXP1]) {
        let t = &self.knots;
        let mut left = [0.0; MAXP1];
        let mut right = [0.0; MAXP1];
        out[0] = 1.0;
        for j in 1..=q {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Values of the `degree + 1` basis functions that can be nonzero at `u`
    /// (after clamping). Returns the index of the first of them.
    #[inline]
    pub fn local(&self, u: f64, vals: &mut [f64; MAXP1]) -> usize {
        let u = self.clamp(u);
        let span = self.find_span(u);
        self.basis_funs(span, u, self.degree, vals);
        span - self.degree
    }

    /// Local values and first derivatives.
    #[inline]
    pub fn local_with_deriv(
        &self,
        u: f64,
        vals: &mut [f64; MAXP1],
        ders: &mut [f64; MAXP1],
    ) -> usize {
        let u = self.clamp(u);
        let span = self.find_span(u);
        let p = self.degree;
        self.basis_funs(span, u, p, vals);
        if p == 0 {
            ders[0] = 0.0;
            return span;
        }
        let mut lower = [0.0; MAXP1];
        self.basis_funs(span, u, p - 1, &mut lower);
        let t = &self.knots;
        let pf = p as f64;
        for r in 0..=p {
            let i = span - p + r;
            let mut v = 0.0;
            if r >= 1 {
                let den = t[i + p] - t[i];
                if den > 0.0 {
                    v += lower[r - 1] / den;
                }
            }
            if r < p {
                let den = t[i + p + 1] - t[i + 1];
                if den > 0.0 {
                    v -= lower[r] / den;
                }
            }
            ders[r] = pf * v;
        }
        span - p
    }

    /// Derivatives of order 0..=n of the local basis functions at `u`
    /// (general recursion, used for penalties).
    pub fn local_derivs(&self, u: f64, n: usize) -> (usize, Vec<Vec<f64>>) {
        let u = self.clamp(u);
        let p = self.degree;
        let span = self.find_span(u);
        let t = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n.min(p) {
                let mut dsum = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    dsum = a[s2][0] * ndu[rk][pk];
                }
                let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2: usize = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                let mut j = j1;
                while j <= j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    dsum += a[s2][j] * ndu[idx][pk];
                    j += 1;
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    dsum += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = dsum;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            if k > p {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            for v in row.iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        (span - p, ders)
    }

    pub fn design(&self, u: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(u.len(), self.n_basis);
        let mut vals = [0.0; MAXP1];
        for (i, &x) in u.iter().enumerate() {
            let first = self.local(x, &mut vals);
            for r in 0..=self.degree {
                out[(i, first + r)] = vals[r];
            }
        }
        out
    }

    pub fn derivative_design(&self, u: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(u.len(), self.n_basis);
        let mut vals = [0.0; MAXP1];
        let mut ders = [0.0; MAXP1];
        for (i, &x) in u.iter().enumerate() {
            let first = self.local_with_deriv(x, &mut vals, &mut ders);
            for r in 0..=self.degree {
                out[(i, first + r)] = ders[r];
            }
        }
        out
    }

    /// Value of the spline with raw coefficients `gamma` at `u`.
    #[inline]
    pub fn value(&self, gamma: &[f64], u: f64) -> f64 {
        let mut vals = [0.0; MAXP1];
        let first = self.local(u, &mut vals);
        let mut s = 0.0;
        for r in 0..=self.degree {
            s += vals[r] * gamma[first + r];
        }
        s
    }

    /// Value and first derivative of the spline with raw coefficients `gamma`.
    #[inline]
    pub fn value_and_slope(&self, gamma: &[f64], u: f64) -> (f64, f64) {
        let mut vals = [0.0; MAXP1];
        let mut ders = [0.0; MAXP1];
        let first = self.local_with_deriv(u, &mut vals, &mut ders);
        let (mut f, mut g) = (0.0, 0.0);
        for r in 0..=self.degree {
            f += vals[r] * gamma[first + r];
            g += ders[r] * gamma[first + r];
        }
        (f, g)
    }

    /// Raw (uncentred) integrated squared second-derivative penalty.
    pub fn penalty(&self) -> Result<DMatrix<f64>> {
        let p = self.degree;
        if p < 2 {
            return arg_err(format!("second-derivative penalty needs degree >= 2, got {p}"));
        }
        let d = self.n_basis;
        let mut s = DMatrix::zeros(d, d);
        // The integrand is a polynomial of degree 2(p-2) on each knot interval.
        let (nodes, weights) = gauss_legendre(p.max(2));
        for cell in p..d {
            let a = self.knots[cell];
            let b = self.knots[cell + 1];
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let u = mid + half * x;
                let (first, ders) = self.local_derivs(u, 2);
                for r in 0..=p {
                    for q in 0..=p {
                        s[(first + r, first + q)] += w * half * ders[2][r] * ders[2][q];
                    }
                }
            }
        }
        symmetrize(&mut s);
        Ok(s)
    }

    /// Greville abscissae; the coefficient vector equal to these reproduces u.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.n_basis)
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

pub fn bspline_design(cfg: &SplineConfig, u: &[f64]) -> Result<DMatrix<f64>> {
    if u.is_empty() {
        return arg_err("empty evaluation vector");
    }
    Ok(BSplineBasis::new(cfg)?.design(u))
}

pub fn bspline_derivative_design(cfg: &SplineConfig, u: &[f64]) -> Result<DMatrix<f64>> {
    if u.is_empty() {
        return arg_err("empty evaluation vector");
    }
    Ok(BSplineBasis::new(cfg)?.derivative_design(u))
}

pub fn second_derivative_penalty(cfg: &SplineConfig) -> Result<DMatrix<f64>> {
    BSplineBasis::new(cfg)?.penalty()
}

/// Orthonormal basis (d x (d-1)) of the orthogonal complement of `c`,
/// built from the Householder reflection that maps `c` onto the first axis.
pub fn centering_transform(c: &DVector<f64>) -> DMatrix<f64> {
    let d = c.len();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = c.norm();
    if norm == 0.0 {
        return DMatrix::identity(d, d).columns(1, d - 1).into_owned();
    }
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.norm_squared();
    let h = DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, d - 1).into_owned()
}

fn column_means(design: &DMatrix<f64>) -> DVector<f64> {
    let n = design.nrows().max(1) as f64;
    DVector::from_iterator(design.ncols(), design.column_iter().map(|c| c.sum() / n))
}

/// Centre a design evaluated at the reference values: returns the centred
/// design `design * T` and `T`, whose columns span the null space of the
/// column-mean row.
pub fn apply_centering(design: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if design.nrows() == 0 {
        return arg_err("reference values must be nonempty");
    }
    let d = design.ncols();
    let sv = design.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0f64, |m, v| m.max(*v));
    let rank = sv.iter().filter(|v| **v > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    if rank < d {
        return Err(Error::Degenerate(format!("design has rank {rank} < {d} columns")));
    }
    let t = centering_transform(&column_means(design));
    Ok((design * &t, t))
}

/// B-spline basis with the sum-to-zero constraint taken over a fixed set of
/// reference values, plus the matching penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredBasis {
    pub basis: BSplineBasis,
    /// d x (d-1)
    pub transform: DMatrix<f64>,
    /// (d-1) x (d-1) centred penalty; empty when the degree is below 2.
    pub penalty: DMatrix<f64>,
}

impl CenteredBasis {
    pub fn new(cfg: &SplineConfig, reference_values: &[f64]) -> Result<Self> {
        if reference_values.is_empty() {
            return arg_err("reference values must be nonempty");
        }
        let basis = BSplineBasis::new(cfg)?;
        let mut sums = DVector::zeros(basis.n_basis);
        let mut vals = [0.0; MAXP1];
        for &v in reference_values {
            let first = basis.local(v, &mut vals);
            for r in 0..=basis.degree {
                sums[first + r] += vals[r];
            }
        }
        let means = sums / reference_values.len() as f64;
        let transform = centering_transform(&means);
        let penalty = if basis.degree >= 2 {
            let raw = basis.penalty()?;
            let mut s = transform.transpose() * raw * &transform;
            symmetrize(&mut s);
            s
        } else {
            DMatrix::zeros(basis.n_basis - 1, basis.n_basis - 1)
        };
        Ok(CenteredBasis { basis, transform, penalty })
    }

    /// Dimension of the centred coefficient vector.
    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn eval(&self, u: &[f64]) -> DMatrix<f64> {
        self.basis.design(u) * &self.transform
    }

    pub fn eval_derivative(&self, u: &[f64]) -> DMatrix<f64> {
        self.basis.derivative_design(u) * &self.transform
    }

    /// Map centred coefficients to raw B-spline coefficients.
    pub fn raw_coefficients(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.transform * beta
    }

    pub fn value(&self, beta: &DVector<f64>, u: f64) -> f64 {
        let g = self.raw_coefficients(beta);
        self.basis.value(g.as_slice(), u)
    }
}

/// s-th order difference operator, (L-s) x L.
pub fn difference_matrix(l: usize, s: usize) -> Result<DMatrix<f64>> {
    if s == 0 || s >= l {
        return arg_err(format!("difference order s={s} must satisfy 1 <= s < L={l}"));
    }
    let mut coef = vec![0.0; s + 1];
    // (-1)^(s-i) * binom(s, i)
    let mut binom = 1.0;
    for (i, c) in coef.iter_mut().enumerate() {
        if i > 0 {
            binom = binom * (s - i + 1) as f64 / i as f64;
        }
        *c = if (s - i) % 2 == 0 { binom } else { -binom };
    }
    let mut dmat = DMatrix::zeros(l - s, l);
    for r in 0..(l - s) {
        for (i, c) in coef.iter().enumerate() {
            dmat[(r, r + i)] = *c;
        }
    }
    Ok(dmat)
}

/// Psi' D_s' D_s Psi.
pub fn lag_precision(l: usize, s: usize, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if psi.nrows() != l {
        return dim_err(format!("Psi has {} rows, expected L={}", psi.nrows(), l));
    }
    let d = difference_matrix(l, s)?;
    let dp = d * psi;
    let mut out = dp.transpose() * dp;
    symmetrize(&mut out);
    Ok(out)
}

/// Orthonormal lag basis (L x m): natural cubic spline over lags 1..L with
/// `m` equally spaced interior knots, orthonormalized by QR; the first `m`
/// columns are kept.
pub fn natural_spline_basis(l: usize, m: usize) -> Result<DMatrix<f64>> {
    if l < 2 {
        return arg_err(format!("need at least two lags, got L={l}"));
    }
    if m == 0 || m > l {
        return arg_err(format!("basis dimension m={m} must satisfy 1 <= m <= L={l}"));
    }
    let n_knots = m + 2;
    let knots: Vec<f64> = (0..n_knots).map(|i| i as f64 / (n_knots - 1) as f64).collect();
    let last = knots[n_knots - 1];
    let cube = |x: f64| if x > 0.0 { x * x * x } else { 0.0 };
    let dk = |x: f64, k: usize| (cube(x - knots[k]) - cube(x - last)) / (last - knots[k]);
    let mut b = DMatrix::zeros(l, n_knots);
    for row in 0..l {
        let x = row as f64 / (l - 1) as f64;
        b[(row, 0)] = 1.0;
        b[(row, 1)] = x;
        for k in 0..(n_knots - 2) {
            b[(row, k + 2)] = dk(x, k) - dk(x, n_knots - 2);
        }
    }
    let qr = b.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..q.ncols().min(m) {
        if r[(c, c)].abs() < 1e-10 {
            return Err(Error::Degenerate(format!("lag basis column {c} is dependent")));
        }
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    Ok(q.columns(0, m).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cox_de_boor(t: &[f64], i: usize, p: usize, u: f64, last: bool) -> f64 {
        if p == 0 {
            if (t[i] <= u && u < t[i + 1]) || (last && u == t[i + 1] && t[i] < t[i + 1]) {
                return 1.0;
            }
            return 0.0;
        }
        let mut v = 0.0;
        let d1 = t[i + p] - t[i];
        if d1 > 0.0 {
            v += (u - t[i]) / d1 * cox_de_boor(t, i, p - 1, u, last);
        }
        let d2 = t[i + p + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + p + 1] - u) / d2 * cox_de_boor(t, i + 1, p - 1, u, last);
        }
        v
    }

    #[test]
    fn degree_zero_indicator() {
        let cfg = SplineConfig::new(0, 2, 0.0, 2.0);
        let b = bspline_design(&cfg, &[0.5]).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn matches_recursive_oracle() {
        let cfg = SplineConfig::new(3, 8, -2.0, 3.0);
        let basis = BSplineBasis::new(&cfg).unwrap();
        let u: Vec<f64> = (0..50).map(|i| -2.0 + 5.0 * i as f64 / 49.0).collect();
        let b = basis.design(&u);
        for (r, &x) in u.iter().enumerate() {
            let at_end = x >= 3.0;
            for c in 0..8 {
                let oracle = cox_de_boor(&basis.knots, c, 3, x, at_end);
                assert!((b[(r, c)] - oracle).abs() < 1e-10, "u={x} c={c}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let cfg = SplineConfig::new(3, 8, -1.0, 1.0);
        let u: Vec<f64> = (0..40).map(|i| -0.97 + 1.94 * i as f64 / 39.0).collect();
        let h = 1e-5;
        let d = bspline_derivative_design(&cfg, &u).unwrap();
        let up: Vec<f64> = u.iter().map(|x| x + h).collect();
        let dn: Vec<f64> = u.iter().map(|x| x - h).collect();
        let fd = (bspline_design(&cfg, &up).unwrap() - bspline_design(&cfg, &dn).unwrap()) / (2.0 * h);
        assert!((d.clone() - fd).amax() < 1e-6);
        for r in 0..u.len() {
            assert!(d.row(r).sum().abs() < 1e-10);
        }
        let c0 = SplineConfig::new(0, 3, 0.0, 1.0);
        assert_eq!(bspline_derivative_design(&c0, &[0.2, 0.7]).unwrap().amax(), 0.0);
    }

    #[test]
    fn general_derivatives_agree_with_fast_path() {
        let basis = BSplineBasis::new(&SplineConfig::new(3, 9, 0.0, 4.0)).unwrap();
        let mut vals = [0.0; MAXP1];
        let mut ders = [0.0; MAXP1];
        for &u in &[0.0, 0.3, 1.7, 2.2, 3.99, 4.0] {
            let f1 = basis.local_with_deriv(u, &mut vals, &mut ders);
            let (f2, all) = basis.local_derivs(u, 2);
            assert_eq!(f1, f2);
            for r in 0..=3 {
                assert!((all[0][r] - vals[r]).abs() < 1e-12);
                assert!((all[1][r] - ders[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn penalty_kills_linear_functions() {
        let cfg = SplineConfig::new(3, 8, -3.0, 3.0);
        let basis = BSplineBasis::new(&cfg).unwrap();
        let s = basis.penalty().unwrap();
        assert!((s.clone() - s.transpose()).amax() < 1e-14);
        let g = DVector::from_vec(basis.greville());
        let ones = DVector::from_element(8, 1.0);
        assert!((g.transpose() * &s * &g)[(0, 0)].abs() < 1e-10);
        assert!((ones.transpose() * &s * &ones)[(0, 0)].abs() < 1e-10);
        assert!(matches!(second_derivative_penalty(&SplineConfig::new(1, 4, 0.0, 1.0)), Err(_)));
    }

    #[test]
    fn penalty_single_element_matches_adaptive_quadrature() {
        let cfg = SplineConfig::new(3, 8, 0.0, 5.0);
        let basis = BSplineBasis::new(&cfg).unwrap();
        let s = basis.penalty().unwrap();
        // b_0 is supported only on the first cell: integrate b_0'' squared by
        // adaptive Simpson on the analytic second derivative via finite differences.
        let second = |u: f64| {
            let (_, d) = basis.local_derivs(u, 2);
            let (first, _) = basis.local_derivs(u, 0);
            if first == 0 {
                d[2][0]
            } else {
                0.0
            }
        };
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64, whole: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let left = (c - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + c)) + f(c));
            let right = (b - c) / 6.0 * (f(c) + 4.0 * f(0.5 * (c + b)) + f(b));
            if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(f, a, c, eps / 2.0, left, depth - 1) + simpson(f, c, b, eps / 2.0, right, depth - 1)
        }
        let f = |u: f64| second(u).powi(2);
        let a = 0.0;
        let b = basis.knots[4];
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        let oracle = simpson(&f, a, b - 1e-12, 1e-12, whole, 40);
        assert!((s[(0, 0)] - oracle).abs() < 1e-8, "{} vs {}", s[(0, 0)], oracle);
    }

    #[test]
    fn centering_examples() {
        let ones = DMatrix::from_element(5, 1, 1.0);
        let (c, t) = apply_centering(&ones).unwrap();
        assert_eq!(c.ncols(), 0);
        assert_eq!(t.ncols(), 0);

        let z = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.0, 1.0, -2.0, -1.0, 0.0]);
        let (c, t) = apply_centering(&z).unwrap();
        assert!((t.transpose() * &t - DMatrix::identity(1, 1)).amax() < 1e-14);
        assert!(column_means(&c).amax() < 1e-14);

        let rank_def = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(apply_centering(&rank_def), Err(Error::Degenerate(_))));
    }

    #[test]
    fn difference_and_lag_precision_examples() {
        let d = difference_matrix(3, 1).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 3, &[-1., 1., 0., 0., -1., 1.]));
        let d = difference_matrix(4, 2).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 4, &[1., -2., 1., 0., 0., 1., -2., 1.]));
        assert!(difference_matrix(3, 3).is_err());
        let q = lag_precision(3, 1, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]));
    }

    #[test]
    fn natural_basis_is_orthonormal_and_smooth() {
        let psi = natural_spline_basis(52, 6).unwrap();
        assert_eq!(psi.shape(), (52, 6));
        assert!((psi.transpose() * &psi - DMatrix::identity(6, 6)).amax() < 1e-10);
        // constants and linear trends are in the span
        let ones = DVector::from_element(52, 1.0);
        let resid = &ones - &psi * (psi.transpose() * &ones);
        assert!(resid.amax() < 1e-10);
        assert!(natural_spline_basis(4, 5).is_err());
        let full = natural_spline_basis(4, 4).unwrap();
        assert!((full.transpose() * &full - DMatrix::identity(4, 4)).amax() < 1e-10);
    }
}
