//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 9`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mixborrow::coclustering::{joint_indicator_pmf, sample_prior_indicators, ClusterState, IndicatorMode, IndicatorTable};
use mixborrow::importance::{exposure_importance, Bandwidth, ConditionalModel, Surface};
use mixborrow::linalg::std_normal_vec;
use mixborrow::posterior::erf_summary;
use mixborrow::rng::rng_from_seed;
use mixborrow::simulate::{
    gen_var_exposures, generate, run_replication_study, Estimator, ScenarioKind, SimScenario, StudyConfig, StudyReport,
};
use mixborrow::{
    build_dlnm_spec, build_nonseparable_spec, run_chain, ChainOutput, Dataset, ModelSpec, Sampler, SweepControl,
};
use nalgebra::{DMatrix, DVector};

// Tolerances.
const C1_TARGET: f64 = 0.5;
const C1_TOL: f64 = 0.02;
const C2_PRODUCT_TOL: f64 = 1e-14;
const C2_DIAG_MASS: f64 = 1.0 - 1e-8;
const C3_MEAN_TOL: f64 = 1e-2;
const C3_COV_REL: f64 = 0.05;
const C4_N_SE: f64 = 3.0;
const C5_NORM_TOL: f64 = 1e-10;
const C8_TOL: f64 = 0.05;
const C8_EXCLUDED: f64 = 0.05;
const C9_MEAN_TOL: f64 = 1e-2;
const C10_ORTH_TOL: f64 = 1e-8;

type Outcome = (bool, String);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 11] = [
        (1, c1_prior_coclustering),
        (2, c2_pmf_limits),
        (3, c3_conjugate_atoms),
        (4, c4_geweke),
        (5, c5_sphere_invariants),
        (6, c6_sim_a),
        (7, c7_sim_b1),
        (8, c8_importance),
        (9, c9_nonseparable_conjugate),
        (10, c10_kriging),
        (11, c11_determinism),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {id}: {} ({detail}) [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn cluster_state(mode: IndicatorMode, k: usize, j: usize, c: usize, alpha: f64, rho: f64) -> ClusterState {
    let mut sticks = vec![0.5; c];
    sticks[c - 1] = 1.0;
    ClusterState {
        mode,
        z_beta: IndicatorTable::new(k, j, 0),
        z_theta: IndicatorTable::new(k, j, 0),
        v_beta: sticks.clone(),
        v_theta: sticks,
        log1m_v_beta: vec![],
        log1m_v_theta: vec![],
        alpha_beta: alpha,
        alpha_theta: alpha,
        rho,
        beta_atoms: vec![DVector::zeros(1); c],
        theta_atoms: vec![DVector::from_element(1, 1.0); c],
    }
}

fn c1_prior_coclustering() -> Outcome {
    let mut state = cluster_state(IndicatorMode::Joint, 1, 2, 20, 1.0, 0.0);
    let mut rng = rng_from_seed(101);
    let n = 50_000;
    let mut same = 0usize;
    for _ in 0..n {
        sample_prior_indicators(&mut state, &mut rng).unwrap();
        if state.z_beta.get(0, 0) == state.z_beta.get(0, 1) {
            same += 1;
        }
    }
    let p = same as f64 / n as f64;
    ((p - C1_TARGET).abs() <= C1_TOL, format!("P(same beta cluster) = {p:.4}, target {C1_TARGET} +/- {C1_TOL}"))
}

fn c2_pmf_limits() -> Outcome {
    let pb = [0.4, 0.3, 0.2, 0.1];
    let pt = [0.1, 0.2, 0.3, 0.4];
    let indep = joint_indicator_pmf(&pb, &pt, 0.0).unwrap();
    let mut max_err: f64 = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            max_err = max_err.max((indep[(a, b)] - pb[a] * pt[b]).abs());
        }
    }
    let tied = joint_indicator_pmf(&pb, &pt, 1e9).unwrap();
    let diag: f64 = (0..4).map(|c| tied[(c, c)]).sum();
    (
        max_err < C2_PRODUCT_TOL && diag > C2_DIAG_MASS,
        format!("rho=0 max deviation from product {max_err:.2e}; rho=1e9 diagonal mass 1 - {:.2e}", 1.0 - diag),
    )
}

fn mc_mean_cov(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = draws[0].len();
    let n = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(d), |acc, b| acc + b) / n;
    let mut cov = DMatrix::zeros(d, d);
    for b in draws {
        let e = b - &mean;
        cov += &e * e.transpose();
    }
    (mean, cov / (n - 1.0))
}

/// Posterior of the single beta atom given everything else, written out from
/// the Gaussian likelihood and prior without the sampler's update code.
fn gaussian_oracle(
    design: &DMatrix<f64>,
    resid: &DVector<f64>,
    prior_precision: &DMatrix<f64>,
    sigma2: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let precision = prior_precision + design.transpose() * design / sigma2;
    let cov = precision.clone().try_inverse().expect("precision is invertible");
    let mean = &cov * (design.transpose() * resid / sigma2);
    (mean, cov)
}

fn compare_gaussian(draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, f64) {
    let (m, c) = mc_mean_cov(draws);
    let mean_err = (m - mean).amax();
    let cov_err = (c - cov).norm() / cov.norm();
    (mean_err, cov_err)
}

fn beta_only_control() -> SweepControl {
    SweepControl { beta_atoms: true, ..SweepControl::none() }
}

fn fix_for_oracle(sampler: &mut Sampler, sigma2: f64) {
    let mut st = sampler.state.clone();
    st.xi = 0.0;
    st.u.fill(0.0);
    st.sigma2.fill(sigma2);
    st.lambda_beta = 25.0;
    sampler.set_state(st).unwrap();
}

fn c3_conjugate_atoms() -> Outcome {
    let (n, l) = (100, 4);
    let x = gen_var_exposures(n, 1, l, 303).unwrap();
    let mut rng = rng_from_seed(304);
    let noise = std_normal_vec(n, &mut rng);
    let y = DMatrix::from_fn(n, 1, |i, _| (x.row(i).sum() / 2.0).sin() + 0.1 * noise[i]);
    let data = Dataset::new(y.clone(), x.clone(), None).unwrap();
    let spec = build_dlnm_spec(1, l, None).unwrap().with_outcomes(1).with_truncation(1);
    let mut sampler = Sampler::new(&spec, &data, 305).unwrap().with_control(beta_only_control());
    let sigma2 = 0.01;
    fix_for_oracle(&mut sampler, sigma2);

    let model = sampler.model().clone();
    let theta = sampler.state.theta_atom(0, 0).clone();
    // index value u_i = sum_l x_il theta_l (single exposure, full lag basis)
    let u: Vec<f64> = (0..n).map(|i| (0..l).map(|c| x[(i, c)] * theta[c]).sum()).collect();
    let design = model.basis.eval(&u);
    let d = design.ncols();
    let prior = &model.basis.penalty * sampler.state.lambda_beta
        + DMatrix::identity(d, d) * spec.hyper.null_precision;
    let resid = DVector::from_fn(n, |i, _| y[(i, 0)] - sampler.state.beta0[0]);
    let (mean, cov) = gaussian_oracle(&design, &resid, &prior, sigma2);

    let draws: Vec<DVector<f64>> = (0..50_000)
        .map(|_| {
            sampler.sweep().unwrap();
            sampler.state.cluster.beta_atoms[0].clone()
        })
        .collect();
    let (mean_err, cov_err) = compare_gaussian(&draws, &mean, &cov);
    (
        mean_err < C3_MEAN_TOL && cov_err < C3_COV_REL,
        format!("max |mean error| {mean_err:.2e} (< {C3_MEAN_TOL}), relative Frobenius cov error {cov_err:.3} (< {C3_COV_REL})"),
    )
}

/// Batch-means standard error of the mean.
fn batch_se(series: &[f64], n_batches: usize) -> f64 {
    let b = series.len() / n_batches;
    let means: Vec<f64> = (0..n_batches).map(|i| series[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

fn c4_geweke() -> Outcome {
    let (n, k, p, l) = (20, 2, 2, 4);
    let x = gen_var_exposures(n, p, l, 404).unwrap();
    let y = DMatrix::from_fn(n, k, |i, kk| 0.1 * (i as f64 - 10.0) * (kk as f64 + 1.0) / n as f64);
    let data = Dataset::new(y, x, None).unwrap();
    let mut spec = build_dlnm_spec(p, l, None).unwrap().with_outcomes(k);
    spec.hyper.a_xi = 6.0;
    spec.hyper.b_xi = 5.0;
    spec.hyper.a_sigma = 6.0;
    spec.hyper.b_sigma = 5.0;
    spec.hyper.null_precision = 1.0;
    let control = SweepControl { intercepts: false, covariates: false, ..SweepControl::all() };
    let mut sampler = Sampler::new(&spec, &data, 405).unwrap().with_control(control);
    sampler.sample_prior_state().unwrap();
    let y = sampler.simulate_outcomes();
    sampler.set_outcomes(y).unwrap();

    let n_sweeps = 100_000;
    let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for _ in 0..n_sweeps {
        sampler.sweep().unwrap();
        let s = &sampler.state;
        let values = [
            ("xi", s.xi),
            ("sigma2_1", s.sigma2[0]),
            ("lambda_beta", s.lambda_beta),
            ("alpha_beta", s.cluster.alpha_beta),
        ];
        for (name, v) in values {
            series.entry(name).or_default().push(v);
        }
        let y = sampler.simulate_outcomes();
        sampler.set_outcomes(y).unwrap();
    }
    // InvGamma(6, 5): mean 1, second moment 25/20; Gamma(1, 1): 1 and 2.
    let truth = [("xi", 1.0, 1.25), ("sigma2_1", 1.0, 1.25), ("lambda_beta", 1.0, 2.0), ("alpha_beta", 1.0, 2.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m1, m2) in truth {
        let s = &series[name];
        let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
        for (order, target, vals) in [(1, m1, s.as_slice()), (2, m2, sq.as_slice())] {
            let est = vals.iter().sum::<f64>() / vals.len() as f64;
            let z = (est - target) / batch_se(vals, 50);
            ok &= z.abs() <= C4_N_SE;
            parts.push(format!("{name} m{order} z={z:+.2}"));
        }
    }
    (ok, format!("{}; |z| <= {C4_N_SE}", parts.join(", ")))
}

fn c5_sphere_invariants() -> Outcome {
    let scn = SimScenario::reduced(ScenarioKind::SimA, 500, 3, 16, 505);
    let (data, _) = generate(&scn).unwrap();
    let spec = build_dlnm_spec(3, 16, Some(6)).unwrap().with_outcomes(4);
    let mut sampler = Sampler::new(&spec, &data, 506).unwrap();
    let (mut max_norm_err, mut min_last): (f64, f64) = (0.0, f64::INFINITY);
    for _ in 0..10_000 {
        sampler.sweep().unwrap();
        if let Err(e) = sampler.check_state() {
            return (false, format!("state check failed: {e}"));
        }
        for t in &sampler.state.cluster.theta_atoms {
            max_norm_err = max_norm_err.max((t.norm() - 1.0).abs());
            min_last = min_last.min(t[t.len() - 1]);
        }
    }
    (
        max_norm_err < C5_NORM_TOL && min_last >= 0.0,
        format!("max | |theta| - 1 | = {max_norm_err:.1e}, min last coordinate {min_last:.3e} (m = 6, 10000 sweeps)"),
    )
}

fn summary_line(report: &StudyReport, e: Estimator) -> String {
    let s = report.summary_for(e).expect("estimator present");
    format!(
        "{e:?}: mse_f {:.4} mse_omega {:.4} mse_surface {:.4} cocl_beta {:.3}/{:.3} cocl_theta {:.3}/{:.3} ok {}",
        s.mse_f,
        s.mse_omega,
        s.mse_surface,
        s.cocluster_beta_same,
        s.cocluster_beta_diff,
        s.cocluster_theta_same,
        s.cocluster_theta_diff,
        s.n_ok
    )
}

fn c6_sim_a() -> Outcome {
    let scn = SimScenario::reduced(ScenarioKind::SimA, 500, 3, 16, 606);
    let mut cfg = StudyConfig::new(scn, vec![Estimator::Clustered, Estimator::NoClustering], 10);
    cfg.n_iter = 5000;
    cfg.burn_in = 2500;
    cfg.thin = 5;
    let report = run_replication_study(&cfg).unwrap();
    let cl = report.summary_for(Estimator::Clustered).unwrap();
    let nc = report.summary_for(Estimator::NoClustering).unwrap();
    let mse_ok = cl.mse_omega <= nc.mse_omega && cl.mse_f <= nc.mse_f;
    let cocl_ok = cl.cocluster_beta_same > cl.cocluster_beta_diff && cl.cocluster_theta_same > cl.cocluster_theta_diff;
    (
        mse_ok && cocl_ok,
        format!(
            "{}; {}",
            summary_line(&report, Estimator::Clustered),
            summary_line(&report, Estimator::NoClustering)
        ),
    )
}

fn c7_sim_b1() -> Outcome {
    let scn = SimScenario::standard(ScenarioKind::SimB1, 200, 707);
    let mut cfg = StudyConfig::new(scn, vec![Estimator::Clustered, Estimator::Separate], 10);
    cfg.n_iter = 4000;
    cfg.burn_in = 2000;
    cfg.thin = 5;
    let report = run_replication_study(&cfg).unwrap();
    let cl = report.summary_for(Estimator::Clustered).unwrap();
    let sep = report.summary_for(Estimator::Separate).unwrap();
    (
        cl.mse_surface < sep.mse_surface,
        format!("{}; {}", summary_line(&report, Estimator::Clustered), summary_line(&report, Estimator::Separate)),
    )
}

fn c8_importance() -> Outcome {
    let n = 2000;
    let alpha = [1.0, 0.5, 0.25, 0.0];
    let mut rng = rng_from_seed(808);
    let z = std_normal_vec(n * alpha.len(), &mut rng);
    let x = DMatrix::from_column_slice(n, alpha.len(), z.as_slice());
    let surface = Surface::Index {
        weights: vec![DVector::from_column_slice(&alpha)],
        curves: vec![Box::new(|v: f64| v)],
    };
    let total: f64 = alpha.iter().map(|a| a * a).sum();
    let cond = ConditionalModel::Kernel { bandwidth: Bandwidth::Silverman };
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, a) in alpha.iter().enumerate() {
        let phi = exposure_importance(&surface, &x, p, &cond).unwrap().map(|v| v.phi).unwrap_or(f64::NAN);
        let expected = a * a / total;
        let pass = if *a == 0.0 { phi < C8_EXCLUDED } else { (phi - expected).abs() <= C8_TOL };
        ok &= pass;
        parts.push(format!("phi{} {phi:.3} (expected {expected:.3})", p + 1));
    }
    (ok, parts.join(", "))
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

fn c9_nonseparable_conjugate() -> Outcome {
    let (n, l, m) = (200, 6, 3);
    let x = gen_var_exposures(n, 1, l, 909).unwrap();
    let mut rng = rng_from_seed(910);
    let noise = std_normal_vec(n, &mut rng);
    let y = DMatrix::from_fn(n, 1, |i, _| {
        (0..l).map(|c| (x[(i, c)]).tanh() * (l - c) as f64 / l as f64).sum::<f64>() + 0.1 * noise[i]
    });
    let data = Dataset::new(y.clone(), x.clone(), None).unwrap();
    let spec: ModelSpec = build_nonseparable_spec(1, l, Some(m)).unwrap().with_outcomes(1).with_truncation(1);
    let mut sampler = Sampler::new(&spec, &data, 911).unwrap().with_control(beta_only_control());
    let sigma2 = 0.01;
    fix_for_oracle(&mut sampler, sigma2);

    let model = sampler.model().clone();
    let tensor = model.tensor.as_ref().expect("tensor model");
    let dose = &tensor.dose;
    let psi = &tensor.lag;
    let dd = dose.dim();
    // W_i[a * m + b] = sum_l R_a(x_il) Psi_lb
    let mut design = DMatrix::zeros(n, dd * m);
    for i in 0..n {
        let lags: Vec<f64> = (0..l).map(|c| x[(i, c)]).collect();
        let r = dose.eval(&lags);
        for a in 0..dd {
            for b in 0..m {
                design[(i, a * m + b)] = (0..l).map(|c| r[(c, a)] * psi[(c, b)]).sum();
            }
        }
    }
    let s_theta = spec.theta_prior_matrix().unwrap();
    let kron_sum = kron(&dose.penalty, &DMatrix::identity(m, m)) + kron(&DMatrix::identity(dd, dd), &s_theta);
    let prior = kron_sum * sampler.state.lambda_beta + DMatrix::identity(dd * m, dd * m) * spec.hyper.null_precision;
    let resid = DVector::from_fn(n, |i, _| y[(i, 0)] - sampler.state.beta0[0]);
    let (mean, cov) = gaussian_oracle(&design, &resid, &prior, sigma2);

    let draws: Vec<DVector<f64>> = (0..50_000)
        .map(|_| {
            sampler.sweep().unwrap();
            sampler.state.cluster.beta_atoms[0].clone()
        })
        .collect();
    let (mean_err, cov_err) = compare_gaussian(&draws, &mean, &cov);
    (
        mean_err < C9_MEAN_TOL,
        format!("max |mean error| {mean_err:.2e} (< {C9_MEAN_TOL}), relative cov error {cov_err:.3}"),
    )
}

fn c10_kriging() -> Outcome {
    let scn = SimScenario::reduced(ScenarioKind::Identifiability, 200, 3, 12, 1010);
    let (data, _) = generate(&scn).unwrap();
    let base = build_dlnm_spec(3, 12, None).unwrap().with_outcomes(data.n_outcomes());
    let mut orth_spec = base.clone();
    orth_spec.orthogonalize_random_effects = true;
    let (n_iter, burn_in) = (3000, 1000);
    let plain = run_chain(&base, &data, n_iter, burn_in, 1, 1011).unwrap();
    let orth = run_chain(&orth_spec, &data, n_iter, burn_in, 1, 1011).unwrap();

    let mut checker = Sampler::new(&orth_spec, &data, 1).unwrap();
    let mut worst: f64 = 0.0;
    for draw in &orth.draws {
        checker.set_state(draw.clone()).unwrap();
        let cols = checker.fixed_effect_columns();
        worst = worst.max((cols.transpose() * &draw.u).amax());
    }

    let (overlap_ok, n_points) = intervals_overlap(&plain, &orth);
    (
        worst < C10_ORTH_TOL && overlap_ok,
        format!(
            "max |B'u| over {} draws {worst:.2e} (< {C10_ORTH_TOL}); ERF intervals overlap at all {n_points} grid points: {overlap_ok}",
            orth.draws.len()
        ),
    )
}

fn intervals_overlap(a: &ChainOutput, b: &ChainOutput) -> (bool, usize) {
    let (lo, hi) = a.model.range();
    let (lo, hi) = (lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo));
    let grid: Vec<f64> = (0..20).map(|g| lo + (hi - lo) * g as f64 / 19.0).collect();
    let (k, p) = (a.model.spec.n_outcomes, a.model.spec.n_indices);
    let mut ok = true;
    let mut count = 0;
    for kk in 0..k {
        for j in 0..p {
            let sa = erf_summary(a, kk, j, &grid).unwrap();
            let sb = erf_summary(b, kk, j, &grid).unwrap();
            for g in 0..grid.len() {
                count += 1;
                ok &= sa.lower[g] <= sb.upper[g] && sb.lower[g] <= sa.upper[g];
            }
        }
    }
    (ok, count)
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mixborrow"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let write = |name: &str, body: &str| std::fs::write(root.join(name), body).unwrap();
    write("sim.toml", "[chain]\nseed = 3\n\n[simulate]\nscenario = \"sim_a\"\nn = 80\np = 2\nl = 6\n");
    write(
        "fit.toml",
        "[model]\nkind = \"dlnm\"\nn_exposures = 2\nn_lags = 6\nreduction_dim = 3\n\n\
         [chain]\nn_iter = 60\nburn_in = 20\nthin = 2\nn_chains = 2\nseed = 5\n\n[data]\npath = \"sim1/data.csv\"\n",
    );
    write(
        "study.toml",
        "[chain]\nn_iter = 40\nburn_in = 20\nthin = 2\nseed = 9\n\n\
         [study]\nscenario = \"sim_b1\"\nn = 60\nestimators = [\"clustered\", \"separate\"]\nn_reps = 2\n",
    );
    let runs: [(&str, &str, &[&str]); 8] = [
        ("simulate", "sim.toml", &["--out", "sim1"]),
        ("simulate", "sim.toml", &["--out", "sim2"]),
        ("fit", "fit.toml", &["--out", "fit1", "--threads", "1"]),
        ("fit", "fit.toml", &["--out", "fit2", "--threads", "1"]),
        ("fit", "fit.toml", &["--out", "fit3", "--threads", "2"]),
        ("study", "study.toml", &["--out", "study1"]),
        ("study", "study.toml", &["--out", "study2", "--threads", "2"]),
        ("study", "study.toml", &["--out", "study3", "--threads", "1"]),
    ];
    for (cmd, cfg, extra) in runs {
        let mut args = vec![cmd, "--config", cfg];
        args.extend_from_slice(extra);
        if !run_cli(&args, root) {
            return (false, format!("`mixborrow {}` failed", args.join(" ")));
        }
    }
    let groups = [("simulate", vec!["sim1", "sim2"]), ("fit", vec!["fit1", "fit2", "fit3"]), ("study", vec!["study1", "study2", "study3"])];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, dirs) in groups {
        let first = tree_bytes(&root.join(dirs[0]));
        let same = dirs[1..].iter().all(|d| tree_bytes(&root.join(d)) == first);
        ok &= same && !first.is_empty();
        parts.push(format!("{name}: {} files, identical {same}", first.len()));
    }
    (ok, parts.join("; "))
}
