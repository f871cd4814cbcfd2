//! Unit-sphere utilities: the polar-angle cascade, Fisher-Bingham prior draws
//! and the saddlepoint approximation of the Fisher-Bingham normalizing constant.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{gauss_legendre, sym_eigen_sorted};

/// theta_1 = sin(phi_1), theta_l = sin(phi_l) prod_{j<l} cos(phi_j),
/// theta_m = prod_{j<m} cos(phi_j).
pub fn angles_to_unit(phi: &[f64]) -> DVector<f64> {
    let m = phi.len() + 1;
    let mut out = DVector::zeros(m);
    let mut prod = 1.0;
    for (l, &p) in phi.iter().enumerate() {
        out[l] = p.sin() * prod;
        prod *= p.cos();
    }
    out[m - 1] = prod;
    out
}

/// Inverse of [`angles_to_unit`] for unit vectors with a nonnegative last coordinate.
pub fn unit_to_angles(theta: &DVector<f64>) -> Vec<f64> {
    let m = theta.len();
    if m < 2 {
        return vec![];
    }
    let mut tail2: Vec<f64> = vec![0.0; m + 1];
    for l in (0..m).rev() {
        tail2[l] = tail2[l + 1] + theta[l] * theta[l];
    }
    let mut phi = Vec::with_capacity(m - 1);
    for l in 0..m - 1 {
        if l == m - 2 {
            phi.push(theta[l].atan2(theta[m - 1]));
        } else {
            phi.push(theta[l].atan2(tail2[l + 1].sqrt()));
        }
    }
    phi
}

/// Log surface-measure Jacobian of the cascade: sum_l (m-1-l) log|cos(phi_l)|
/// with l counted from 1.
pub fn polar_log_jacobian(phi: &[f64]) -> f64 {
    let m = phi.len() + 1;
    phi.iter()
        .enumerate()
        .map(|(i, p)| {
            let power = (m - 2 - i) as f64;
            if power == 0.0 {
                0.0
            } else {
                power * p.cos().abs().ln()
            }
        })
        .sum()
}

/// Fisher-Bingham law on the unit sphere with density proportional to
/// exp(gamma' x - x' A x).
#[derive(Debug, Clone)]
pub struct FisherBingham {
    shifted_eigs: Vec<f64>,
    eigvecs: DMatrix<f64>,
    gamma: DVector<f64>,
    gamma_norm: f64,
    acg_b: f64,
}

impl FisherBingham {
    pub fn new(a: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<Self> {
        let q = a.nrows();
        if q == 0 || a.ncols() != q || gamma.len() != q {
            return Err(Error::Dimension("Fisher-Bingham parameters do not conform".into()));
        }
        let (vals, vecs) = sym_eigen_sorted(a);
        let min = vals[0];
        let shifted_eigs: Vec<f64> = vals.iter().map(|v| (v - min).max(0.0)).collect();
        // Solve sum_i 1 / (b + 2 a_i) = 1 for b in (0, q].
        let g = |b: f64| shifted_eigs.iter().map(|a| 1.0 / (b + 2.0 * a)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (1e-300f64, q as f64);
        let acg_b = if g(hi) >= 0.0 {
            hi
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        Ok(FisherBingham {
            shifted_eigs,
            eigvecs: vecs,
            gamma: gamma.clone(),
            gamma_norm: gamma.norm(),
            acg_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.shifted_eigs.len()
    }

    /// Draw one vector. With `hemisphere`, the result is reflected so that the
    /// last coordinate is nonnegative (only valid for gamma = 0).
    pub fn sample<R: Rng + ?Sized>(&self, hemisphere: bool, rng: &mut R) -> DVector<f64> {
        let q = self.dim();
        let qf = q as f64;
        let b = self.acg_b;
        let omega: Vec<f64> = self.shifted_eigs.iter().map(|a| 1.0 + 2.0 * a / b).collect();
        let log_m = -(qf - b) / 2.0 + (qf / 2.0) * (qf / b).ln();
        let mut y = DVector::zeros(q);
        loop {
            for i in 0..q {
                let z: f64 = rng.sample(StandardNormal);
                y[i] = z / omega[i].sqrt();
            }
            let norm = y.norm();
            if norm == 0.0 {
                continue;
            }
            y /= norm;
            let quad_a: f64 = (0..q).map(|i| self.shifted_eigs[i] * y[i] * y[i]).sum();
            let quad_o: f64 = (0..q).map(|i| omega[i] * y[i] * y[i]).sum();
            let log_accept = -quad_a + (qf / 2.0) * quad_o.ln() - log_m;
            let u: f64 = rng.random();
            if u.ln() >= log_accept {
                continue;
            }
            let mut x = &self.eigvecs * &y;
            if self.gamma_norm > 0.0 {
                let u2: f64 = rng.random();
                if u2.ln() >= self.gamma.dot(&x) - self.gamma_norm {
                    continue;
                }
            }
            if hemisphere && x[q - 1] < 0.0 {
                x.neg_mut();
            }
            let n = x.norm();
            return x / n;
        }
    }
}

struct SaddleCgf<'a> {
    lam: &'a [f64],
    mu2: &'a [f64],
}

impl SaddleCgf<'_> {
    fn derivs(&self, t: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (l, m2) in self.lam.iter().zip(self.mu2) {
            let d = l - t;
            let c = m2 * l * l;
            out[0] += -0.5 * (1.0 - t / l).ln() + m2 * l * t / d;
            out[1] += 0.5 / d + c / (d * d);
            out[2] += 0.5 / (d * d) + 2.0 * c / (d * d * d);
            out[3] += 1.0 / (d * d * d) + 6.0 * c / (d * d * d * d);
            out[4] += 3.0 / (d * d * d * d) + 24.0 * c / (d * d * d * d * d);
        }
        out
    }

    fn solve(&self, x: f64) -> Result<f64> {
        let lmin = self.lam.iter().copied().fold(f64::INFINITY, f64::min);
        let p = self.lam.len() as f64;
        let musum: f64 = self.mu2.iter().zip(self.lam).map(|(m, l)| m * l * l).sum();
        // With d = lmin - t: 1 / (2 d) <= K'(t) <= p / (2 d) + musum / d^2.
        let d_big = p / x + (2.0 * musum / x).sqrt();
        let mut lo = lmin - d_big * 1.0001 - 1e-12;
        let mut hi = lmin - 1.0 / (2.0 * x);
        let f = |t: f64| self.derivs(t)[1] - x;
        if f(lo) > 0.0 || f(hi) < 0.0 {
            return Err(Error::Numerical("saddlepoint equation could not be bracketed".into()));
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let d = self.derivs(t);
            let val = d[1] - x;
            if val.abs() <= 1e-14 * x.max(1.0) {
                return Ok(t);
            }
            if val > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = t - val / d[2];
            t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (hi - lo) <= 1e-15 * t.abs().max(1.0) {
                break;
            }
        }
        Ok(t)
    }

    /// Log saddlepoint density (with the exp(T) second-order correction) of
    /// the squared radius at `x`.
    fn log_density(&self, x: f64) -> Result<f64> {
        let t = self.solve(x)?;
        let d = self.derivs(t);
        let rho3 = d[3] / d[2].powf(1.5);
        let rho4 = d[4] / (d[2] * d[2]);
        let corr = rho4 / 8.0 - 5.0 * rho3 * rho3 / 24.0;
        Ok(-0.5 * (2.0 * std::f64::consts::PI * d[2]).ln() + d[0] - t * x + corr)
    }
}

/// Log of the normalizing constant of exp(gamma' x - x' A x) over the unit
/// sphere, by a normalized saddlepoint approximation to the density of the
/// squared radius of the matching Gaussian.
pub fn fb_log_normalizer(a: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<f64> {
    let (vals, vecs) = sym_eigen_sorted(a);
    let g = vecs.transpose() * gamma;
    fb_log_normalizer_eigen(vals.as_slice(), g.as_slice())
}

/// As [`fb_log_normalizer`], with A given by its eigenvalues and gamma in the
/// matching eigenbasis.
pub fn fb_log_normalizer_eigen(eigs: &[f64], gamma: &[f64]) -> Result<f64> {
    let p = eigs.len();
    if p == 0 || gamma.len() != p {
        return Err(Error::Dimension("normalizer arguments do not conform".into()));
    }
    if eigs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    // C(A) = exp(-s) C(A + s I) restricted to the sphere, with s = 1 - min.
    let shift = 1.0 - min;
    let lam: Vec<f64> = eigs.iter().map(|v| v + shift).collect();
    let mu2: Vec<f64> = gamma.iter().zip(&lam).map(|(g, l)| (g / (2.0 * l)).powi(2)).collect();
    let cgf = SaddleCgf { lam: &lam, mu2: &mu2 };
    let log_f1 = cgf.log_density(1.0)?;
    // Normalize the saddlepoint density over s > 0 on a log-s grid.
    let mean: f64 = lam.iter().zip(&mu2).map(|(l, m)| 0.5 / l + m).sum();
    let z_lo = mean.ln() - 30.0;
    let z_hi = (mean + 80.0).ln();
    let (nodes, weights) = gauss_legendre(8);
    let panels = 80;
    let width = (z_hi - z_lo) / panels as f64;
    let mut logs = Vec::with_capacity(panels * nodes.len());
    for k in 0..panels {
        let mid = z_lo + (k as f64 + 0.5) * width;
        for (x, w) in nodes.iter().zip(&weights) {
            let z = mid + 0.5 * width * x;
            let ld = cgf.log_density(z.exp())?;
            logs.push(ld + z + (0.5 * width * w).ln());
        }
    }
    let log_norm = crate::linalg::logsumexp(&logs);
    let pf = p as f64;
    let quad_gamma: f64 = gamma.iter().zip(&lam).map(|(g, l)| g * g / (4.0 * l)).sum();
    let log_c = 0.5 * pf * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * lam.iter().map(|l| (2.0 * l).ln()).sum::<f64>()
        + quad_gamma
        + std::f64::consts::LN_2
        + log_f1
        - log_norm;
    let out = log_c + shift;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Numerical("saddlepoint normalizer is not finite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn cascade_examples() {
        let t = angles_to_unit(&[0.0, 0.0, 0.0]);
        assert_eq!(t.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let t = angles_to_unit(&[std::f64::consts::FRAC_PI_4]);
        let h = 0.5f64.sqrt();
        assert!((t[0] - h).abs() < 1e-15 && (t[1] - h).abs() < 1e-15);
    }

    #[test]
    fn cascade_round_trip() {
        let mut rng = rng_from_seed(1);
        for m in 2..8 {
            for _ in 0..200 {
                let mut v = crate::linalg::std_normal_vec(m, &mut rng);
                if v[m - 1] < 0.0 {
                    v.neg_mut();
                }
                v /= v.norm();
                let back = angles_to_unit(&unit_to_angles(&v));
                assert!((back - &v).amax() < 1e-10);
            }
        }
    }

    fn circle_log_normalizer(a: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
        // adaptive Simpson on [0, 2 pi]
        let f = |t: f64| {
            let x = DVector::from_vec(vec![t.cos(), t.sin()]);
            (g.dot(&x) - (x.transpose() * a * &x)[(0, 0)]).exp()
        };
        let n = 20_000;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut s = f(0.0) + f(2.0 * std::f64::consts::PI);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        (s * h / 3.0).ln()
    }

    #[test]
    fn saddlepoint_matches_circle_quadrature() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        for lam in [0.1, 1.0, 10.0] {
            let a = &q * (0.5 * lam);
            let g = DVector::zeros(2);
            let sp = fb_log_normalizer(&a, &g).unwrap();
            let exact = circle_log_normalizer(&a, &g);
            assert!((sp - exact).exp_m1().abs() < 0.01, "lambda {lam}: {sp} vs {exact}");
        }
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let g = DVector::from_vec(vec![0.7, -0.4]);
        // with a linear term the approximation is coarser
        let sp = fb_log_normalizer(&a, &g).unwrap();
        let exact = circle_log_normalizer(&a, &g);
        assert!((sp - exact).exp_m1().abs() < 0.03, "{sp} vs {exact}");
    }

    #[test]
    fn normalizer_invariant_to_isotropic_shift() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 4.0]);
        let g = DVector::zeros(3);
        let c1 = fb_log_normalizer(&a, &g).unwrap();
        let c2 = fb_log_normalizer(&(a + DMatrix::identity(3, 3) * 3.0), &g).unwrap();
        assert!((c1 - 3.0 - c2).abs() < 1e-12, "{c1} {c2}");
        // uniform sphere area in 3-d is 4 pi
        let c0 = fb_log_normalizer(&DMatrix::zeros(3, 3), &g).unwrap();
        assert!((c0 - (4.0 * std::f64::consts::PI).ln()).abs() < 0.01);
    }

    #[test]
    fn hemisphere_uniform_draws() {
        let fb = FisherBingham::new(&DMatrix::zeros(3, 3), &DVector::zeros(3)).unwrap();
        let mut rng = rng_from_seed(9);
        let n = 20_000;
        let mut s = 0.0;
        for _ in 0..n {
            let x = fb.sample(true, &mut rng);
            assert!(x[2] >= 0.0);
            s += x[0] * x[0];
        }
        assert!((s / n as f64 - 1.0 / 3.0).abs() < 0.01);
    }
}
