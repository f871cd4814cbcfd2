//! Synthetic data generators for the simulation scenarios and the
//! replication-study driver.

mod study;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::Dataset;
use crate::rng::{substream, ChainRng};

pub use study::{run_replication_study, Estimator, RepMetrics, StudyConfig, StudyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SimA,
    SimB1,
    SimB2,
    SimB3,
    Nonsep,
    Identifiability,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simA" | "sim_a" => ScenarioKind::SimA,
            "simB1" | "sim_b1" => ScenarioKind::SimB1,
            "simB2" | "sim_b2" => ScenarioKind::SimB2,
            "simB3" | "sim_b3" => ScenarioKind::SimB3,
            "nonsep" => ScenarioKind::Nonsep,
            "identifiability" => ScenarioKind::Identifiability,
            other => return arg_err(format!("unknown scenario '{other}'")),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::SimA => "simA",
            ScenarioKind::SimB1 => "simB1",
            ScenarioKind::SimB2 => "simB2",
            ScenarioKind::SimB3 => "simB3",
            ScenarioKind::Nonsep => "nonsep",
            ScenarioKind::Identifiability => "identifiability",
        }
    }

    /// Whether the scenario has lagged exposures.
    pub fn is_lagged(&self) -> bool {
        matches!(self, ScenarioKind::SimA | ScenarioKind::Nonsep | ScenarioKind::Identifiability)
    }
}

/// Dimensions, seed and noise of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub l: usize,
    pub seed: u64,
    pub noise_sd: Vec<f64>,
}

impl SimScenario {
    /// Full-size scenario as described for each kind.
    pub fn standard(kind: ScenarioKind, n: usize, seed: u64) -> Self {
        let (p, l) = match kind {
            ScenarioKind::SimA | ScenarioKind::Nonsep | ScenarioKind::Identifiability => (5, 52),
            _ => (10, 1),
        };
        SimScenario { kind, n, k: 4, p, l, seed, noise_sd: vec![1.0; 4] }
    }

    /// Lagged scenario with fewer exposures and lags (first p rows of the
    /// mean display).
    pub fn reduced(kind: ScenarioKind, n: usize, p: usize, l: usize, seed: u64) -> Self {
        let mut s = Self::standard(kind, n, seed);
        if kind.is_lagged() {
            s.p = p;
            s.l = l;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return arg_err("n must be at least 2");
        }
        if self.k != 4 || self.noise_sd.len() != 4 {
            return arg_err("all scenarios have K = 4 outcomes");
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return arg_err("noise standard deviations must be finite and nonnegative");
        }
        if self.kind.is_lagged() {
            if !(1..=5).contains(&self.p) || self.l < 2 {
                return arg_err("lagged scenarios need 1 <= P <= 5 and L >= 2");
            }
        } else if self.p != 10 || self.l != 1 {
            return arg_err("cross-sectional scenarios have P = 10 and L = 1");
        }
        Ok(())
    }
}

/// Known ground truth of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SimScenario,
    /// Noiseless outcome means (n x K).
    pub mean: DMatrix<f64>,
    /// Per-pair contributions f_kp(x_p' omega_kp) at the observations,
    /// outcome-major; empty for surfaces without an additive index structure.
    pub pair_effects: Vec<Vec<f64>>,
    /// Unit-norm lag profiles omega_kp (outcome-major), when defined.
    pub weights: Vec<DVector<f64>>,
    pub curve_labels: Vec<String>,
    pub weight_labels: Vec<String>,
}

/// Curves of the distributed-lag scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    F1,
    F2,
    F3,
    F4,
}

impl Curve {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Curve::F1 => 0.04 * a,
            Curve::F2 => 0.24 * (0.3 * a) * (0.3 * a),
            Curve::F3 => 0.09 * a,
            Curve::F4 => 2.0 * (0.2 * a).sin(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Curve::F1 => "f1",
            Curve::F2 => "f2",
            Curve::F3 => "f3",
            Curve::F4 => "f4",
        }
    }
}

/// Lag-profile shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Flat,
    Decreasing,
    Increasing,
}

impl Profile {
    /// Linear ramp (or constant), normalized to unit length.
    pub fn unit(&self, l: usize) -> DVector<f64> {
        let v = self.raw(l);
        let n = v.norm();
        v / n
    }

    /// Same shape scaled so the largest entry is 1.
    pub fn max_scaled(&self, l: usize) -> DVector<f64> {
        self.raw(l) / l as f64 * if *self == Profile::Flat { l as f64 } else { 1.0 }
    }

    fn raw(&self, l: usize) -> DVector<f64> {
        DVector::from_fn(l, |i, _| match self {
            Profile::Flat => 1.0,
            Profile::Decreasing => (l - i) as f64,
            Profile::Increasing => (i + 1) as f64,
        })
    }

    fn label(&self) -> &'static str {
        match self {
            Profile::Flat => "flat",
            Profile::Decreasing => "decreasing",
            Profile::Increasing => "increasing",
        }
    }
}

const SIM_A_CURVES: [[Curve; 5]; 4] = {
    use Curve::*;
    [[F1, F2, F2, F2, F1], [F2, F1, F1, F1, F2], [F3, F3, F4, F4, F4], [F4, F4, F3, F3, F3]]
};
const SIM_A_PROFILES: [Profile; 5] =
    [Profile::Flat, Profile::Decreasing, Profile::Increasing, Profile::Flat, Profile::Flat];

pub const ALPHA1: [f64; 10] = [0.1, 0.1, 0.2, 0.2, 0.25, 0.1, 0.05, 0.08, 0.3, 0.1];
pub const ALPHA2: [f64; 10] = [0.3, 0.05, 0.1, 0.2, 0.1, 0.2, -0.2, -0.2, 0.1, 0.2];
pub const DELTA: [f64; 5] = [0.2118881, 0.1406585, -0.0982663, 0.0153671, -0.0006265];

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Dose curves of the tensor-product scenario.
pub fn nonsep_f1(x: f64) -> f64 {
    0.04 * (x - 2.0)
}

pub fn nonsep_f2(x: f64) -> f64 {
    DELTA.iter().enumerate().map(|(p, d)| 0.3 * d * (x.powi(p as i32) - 5f64.powi(p as i32))).sum()
}

pub fn nonsep_f3(x: f64) -> f64 {
    let g = |x: f64| normal_pdf(x, 1.5, 2.0) + normal_pdf(x, 7.5, 1.0);
    0.4 * (g(x) - g(5.0))
}

/// Lower-triangular factor of Sigma_pq = r^|p-q|.
fn ar_cholesky(p: usize, r: f64) -> DMatrix<f64> {
    let s = DMatrix::from_fn(p, p, |a, b| r.powi((a as i32 - b as i32).abs()));
    s.cholesky().expect("AR correlation matrix is positive definite").l()
}

fn correlated_normal(l: &DMatrix<f64>, rng: &mut ChainRng) -> DVector<f64> {
    let z = DVector::from_fn(l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * z
}

/// Vector-autoregressive exposures, column p * L + l for exposure p at lag l.
pub fn gen_var_exposures(n: usize, p: usize, l: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 || l == 0 {
        return arg_err("P and L must be at least 1");
    }
    let chol = ar_cholesky(p, 0.6);
    let mut rng = substream(seed, 0x5641_5231);
    let mut x = DMatrix::zeros(n, p * l);
    for i in 0..n {
        let mut prev = correlated_normal(&chol, &mut rng);
        for lag in 0..l {
            if lag > 0 {
                prev = prev * 0.85 + correlated_normal(&chol, &mut rng);
            }
            for e in 0..p {
                x[(i, e * l + lag)] = prev[e];
            }
        }
    }
    Ok(x)
}

fn exposure_names(p: usize, l: usize) -> Vec<String> {
    if l == 1 {
        (1..=p).map(|e| format!("x{e}")).collect()
    } else {
        (1..=p).flat_map(|e| (1..=l).map(move |lag| format!("x{e}_l{lag}"))).collect()
    }
}

fn add_noise(mean: &DMatrix<f64>, sd: &[f64], rng: &mut ChainRng) -> DMatrix<f64> {
    let mut y = mean.clone();
    for k in 0..y.ncols() {
        for i in 0..y.nrows() {
            let e: f64 = rng.sample(StandardNormal);
            y[(i, k)] += sd[k] * e;
        }
    }
    y
}

fn assemble(scn: &SimScenario, x: DMatrix<f64>, mean: DMatrix<f64>) -> Result<Dataset> {
    let mut rng = substream(scn.seed, 0x4e4f_4953);
    let y = add_noise(&mean, &scn.noise_sd, &mut rng);
    let mut data = Dataset::new(y, x, None)?;
    data.exposure_names = exposure_names(scn.p, scn.l);
    Ok(data)
}

fn index_scenario(
    scn: &SimScenario,
    curve: impl Fn(usize, usize) -> Curve,
    profile: impl Fn(usize, usize) -> Profile,
) -> Result<(Dataset, GroundTruth)> {
    scn.validate()?;
    let (n, k_out, p, l) = (scn.n, scn.k, scn.p, scn.l);
    let x = gen_var_exposures(n, p, l, scn.seed)?;
    let mut mean = DMatrix::zeros(n, k_out);
    let mut pair_effects = Vec::with_capacity(k_out * p);
    let mut weights = Vec::with_capacity(k_out * p);
    let mut curve_labels = Vec::new();
    let mut weight_labels = Vec::new();
    for k in 0..k_out {
        for e in 0..p {
            let c = curve(k, e);
            let w = profile(k, e).unit(l);
            let eff: Vec<f64> =
                (0..n).map(|i| c.eval((0..l).map(|lag| x[(i, e * l + lag)] * w[lag]).sum())).collect();
            for i in 0..n {
                mean[(i, k)] += eff[i];
            }
            pair_effects.push(eff);
            weights.push(w);
            curve_labels.push(c.label().to_string());
            weight_labels.push(profile(k, e).label().to_string());
        }
    }
    let data = assemble(scn, x, mean.clone())?;
    Ok((data, GroundTruth { scenario: scn.clone(), mean, pair_effects, weights, curve_labels, weight_labels }))
}

/// Distributed-lag scenario with shared curves and lag profiles.
pub fn gen_sim_a(scn: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    if scn.kind != ScenarioKind::SimA {
        return arg_err("scenario kind is not simA");
    }
    index_scenario(scn, |k, e| SIM_A_CURVES[k][e], |_, e| SIM_A_PROFILES[e])
}

/// Full-size distributed-lag scenario (P = 5, L = 52).
pub fn gen_sim_a_standard(n: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
    gen_sim_a(&SimScenario::standard(ScenarioKind::SimA, n, seed))
}

/// Every pair uses f2 and the decreasing profile.
pub fn gen_identifiability(scn: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    if scn.kind != ScenarioKind::Identifiability {
        return arg_err("scenario kind is not identifiability");
    }
    index_scenario(scn, |_, _| Curve::F2, |_, _| Profile::Decreasing)
}

/// True mean of the cross-sectional scenarios at one exposure vector.
pub fn sim_b_mean(kind: ScenarioKind, x: &[f64]) -> Result<[f64; 4]> {
    if x.len() != 10 {
        return arg_err("cross-sectional scenarios have 10 exposures");
    }
    let a1: f64 = x.iter().zip(&ALPHA1).map(|(a, b)| a * b).sum();
    let a2: f64 = x.iter().zip(&ALPHA2).map(|(a, b)| a * b).sum();
    Ok(match kind {
        ScenarioKind::SimB1 => {
            let f1 = a1;
            let f2 = a1 + a2 * a2;
            [0.5 * f1, 0.5 * f1, 0.5 * f2, 0.3 * f2]
        }
        ScenarioKind::SimB2 => {
            let e = (1.2 * x[1]).exp();
            let f1 = (0.5 * x[0]).exp() + 1.5 * e / (1.0 + e) - 0.5 * x[2] * x[2];
            let f2 = x[8] - 0.75 * x[9] * x[9];
            [0.25 * f1, 0.25 * f1, 0.3 * f2, 0.3 * f2]
        }
        ScenarioKind::SimB3 => {
            let f1 = a1 * a2;
            let h = 0.5f64.sqrt();
            [f1, f1, h * f1, h * f1]
        }
        _ => return arg_err("not a cross-sectional scenario"),
    })
}

/// Draw n exposure vectors of the cross-sectional scenarios.
pub fn gen_sim_b_exposures(n: usize, seed: u64) -> DMatrix<f64> {
    let chol = ar_cholesky(10, 0.5);
    let mut rng = substream(seed, 0x4558_5042);
    let mut x = DMatrix::zeros(n, 10);
    for i in 0..n {
        let v = correlated_normal(&chol, &mut rng);
        x.set_row(i, &v.transpose());
    }
    x
}

/// Cross-sectional mixture scenarios 1-3.
pub fn gen_sim_b(scn: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    if !matches!(scn.kind, ScenarioKind::SimB1 | ScenarioKind::SimB2 | ScenarioKind::SimB3) {
        return arg_err("scenario kind is not simB1, simB2 or simB3");
    }
    scn.validate()?;
    let x = gen_sim_b_exposures(scn.n, scn.seed);
    let mut mean = DMatrix::zeros(scn.n, 4);
    for i in 0..scn.n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let m = sim_b_mean(scn.kind, &row)?;
        for k in 0..4 {
            mean[(i, k)] = m[k];
        }
    }
    let data = assemble(scn, x, mean.clone())?;
    Ok((
        data,
        GroundTruth {
            scenario: scn.clone(),
            mean,
            pair_effects: vec![],
            weights: vec![],
            curve_labels: vec![],
            weight_labels: vec![],
        },
    ))
}

/// Per-lag surface value of term g_m at exposure x and lag index `lag`.
fn nonsep_term(m: usize, x: f64, lag: usize, l: usize) -> f64 {
    let w1 = Profile::Flat.max_scaled(l)[lag];
    match m {
        1 => 0.1 * nonsep_f1(x) * w1,
        2 => nonsep_f2(x) * Profile::Decreasing.max_scaled(l)[lag],
        _ => {
            let w = if x >= 0.0 { w1 } else { Profile::Increasing.max_scaled(l)[lag] };
            nonsep_f3(x) * w
        }
    }
}

const NONSEP_TERMS: [[usize; 5]; 4] = [[1, 2, 3, 1, 1], [1, 2, 3, 1, 1], [3, 3, 3, 3, 3], [3, 3, 3, 3, 3]];

/// Tensor-product distributed-lag scenario.
pub fn gen_nonsep(scn: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    if scn.kind != ScenarioKind::Nonsep {
        return arg_err("scenario kind is not nonsep");
    }
    scn.validate()?;
    let (n, p, l) = (scn.n, scn.p, scn.l);
    let mut rng = substream(scn.seed, 0x4e53_4550);
    let innov = (1.0f64 - 0.85 * 0.85).sqrt();
    let mut x = DMatrix::zeros(n, p * l);
    for i in 0..n {
        for e in 0..p {
            let mut z: f64 = rng.sample(StandardNormal);
            for lag in 0..l {
                if lag > 0 {
                    let eps: f64 = rng.sample(StandardNormal);
                    z = 0.85 * z + innov * eps;
                }
                x[(i, e * l + lag)] = 5.0 + 2.5 * z;
            }
        }
    }
    let mut mean = DMatrix::zeros(n, 4);
    let mut pair_effects = Vec::with_capacity(4 * p);
    let mut labels = Vec::new();
    for k in 0..4 {
        for e in 0..p {
            let m = NONSEP_TERMS[k][e];
            let eff: Vec<f64> = (0..n).map(|i| (0..l).map(|lag| nonsep_term(m, x[(i, e * l + lag)], lag, l)).sum()).collect();
            for i in 0..n {
                mean[(i, k)] += eff[i];
            }
            pair_effects.push(eff);
            labels.push(format!("g{m}"));
        }
    }
    let data = assemble(scn, x, mean.clone())?;
    Ok((
        data,
        GroundTruth {
            scenario: scn.clone(),
            mean,
            pair_effects,
            weights: vec![],
            curve_labels: labels,
            weight_labels: vec![],
        },
    ))
}

/// Generate any scenario.
pub fn generate(scn: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    match scn.kind {
        ScenarioKind::SimA => gen_sim_a(scn),
        ScenarioKind::SimB1 | ScenarioKind::SimB2 | ScenarioKind::SimB3 => gen_sim_b(scn),
        ScenarioKind::Nonsep => gen_nonsep(scn),
        ScenarioKind::Identifiability => gen_identifiability(scn),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_values() {
        assert!((Curve::F1.eval(10.0) - 0.4).abs() < 1e-15);
        assert_eq!(Curve::F2.eval(0.0), 0.0);
        assert_eq!(Curve::F2.eval(-3.3), Curve::F2.eval(3.3));
        assert_eq!(nonsep_f1(2.0), 0.0);
        assert!(nonsep_f2(5.0).abs() < 1e-12);
        assert!(nonsep_f3(5.0).abs() < 1e-15);
    }

    #[test]
    fn profiles_are_unit_norm() {
        for p in [Profile::Flat, Profile::Decreasing, Profile::Increasing] {
            assert!((p.unit(52).norm() - 1.0).abs() < 1e-14);
            assert!((p.max_scaled(52).max() - 1.0).abs() < 1e-15);
        }
        let f = Profile::Flat.unit(52);
        assert!(f.iter().all(|v| *v == f[0]));
    }

    #[test]
    fn alpha_sum() {
        let x = [1.0; 10];
        let m = sim_b_mean(ScenarioKind::SimB1, &x).unwrap();
        assert!((m[0] / 0.5 - 1.48).abs() < 1e-12);
    }

    #[test]
    fn generators_are_pure() {
        let s = SimScenario::reduced(ScenarioKind::SimA, 30, 3, 8, 11);
        let (a, _) = gen_sim_a(&s).unwrap();
        let (b, _) = gen_sim_a(&s).unwrap();
        assert_eq!(a, b);
    }
}
