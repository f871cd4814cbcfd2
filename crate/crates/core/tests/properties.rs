use mixborrow::coclustering::{joint_indicator_pmf, sample_log_categorical, stick_weights};
use mixborrow::importance::{group_importance, Bandwidth, ConditionalModel, Surface};
use mixborrow::posterior::{compute_waic, pairwise_clustering, CurveSummary};
use mixborrow::rng::rng_from_seed;
use mixborrow::sphere::{angles_to_unit, unit_to_angles};
use mixborrow::{build_dlnm_spec, build_mim_spec, run_chain, Dataset};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn weights_from(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn joint_pmf_is_a_distribution(
        raw_b in prop::collection::vec(0.01f64..1.0, 2..8),
        raw_t in prop::collection::vec(0.01f64..1.0, 8),
        rho in 0.0f64..50.0,
    ) {
        let c = raw_b.len();
        let pb = weights_from(&raw_b);
        let pt = weights_from(&raw_t[..c]);
        let t = joint_indicator_pmf(&pb, &pt, rho).unwrap();
        prop_assert!(t.iter().all(|p| *p >= 0.0));
        prop_assert!((t.sum() - 1.0).abs() < 1e-12);
        // the diagonal is inflated relative to independence
        let diag: f64 = (0..c).map(|a| t[(a, a)]).sum();
        let indep: f64 = (0..c).map(|a| pb[a] * pt[a]).sum();
        prop_assert!(diag >= indep - 1e-12);
    }

    #[test]
    fn stick_weights_sum_to_one(mut v in prop::collection::vec(0.001f64..0.999, 1..12)) {
        v.push(1.0);
        let p = stick_weights(&v).unwrap();
        prop_assert_eq!(p.len(), v.len());
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polar_angles_land_on_upper_hemisphere(phi in prop::collection::vec(-1.5707f64..1.5707, 1..9)) {
        let t = angles_to_unit(&phi);
        prop_assert!((t.norm() - 1.0).abs() < 1e-12);
        prop_assert!(t[t.len() - 1] >= 0.0);
        let back = angles_to_unit(&unit_to_angles(&t));
        prop_assert!((back - &t).amax() < 1e-9);
    }

    #[test]
    fn categorical_index_in_range(logp in prop::collection::vec(-50.0f64..5.0, 1..20), seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let i = sample_log_categorical(&logp, &mut rng);
        prop_assert!(i < logp.len());
    }

    #[test]
    fn waic_ignores_draw_order(vals in prop::collection::vec(-5.0f64..0.0, 12), shift in 1usize..4) {
        let draws: Vec<DMatrix<f64>> = vals.chunks(3).map(|c| DMatrix::from_column_slice(3, 1, c)).collect();
        let mut rotated = draws.clone();
        rotated.rotate_left(shift);
        let a = compute_waic(&draws).unwrap();
        let b = compute_waic(&rotated).unwrap();
        prop_assert!((a.waic - b.waic).abs() < 1e-10);
        prop_assert!(a.p_waic >= 0.0);
    }

    #[test]
    fn curve_intervals_are_ordered(values in prop::collection::vec(-3.0f64..3.0, 20..60)) {
        let draws: Vec<Vec<f64>> = values.iter().map(|v| vec![*v, 2.0 * v]).collect();
        let s = CurveSummary::from_draws(vec![0.0, 1.0], &draws).unwrap();
        prop_assert!(s.is_ordered());
    }

    #[test]
    fn importance_lies_in_unit_interval(w in prop::collection::vec(-2.0f64..2.0, 3), seed in 0u64..50) {
        prop_assume!(w.iter().any(|v| v.abs() > 0.1));
        let mut rng = rng_from_seed(seed);
        let z = mixborrow::linalg::std_normal_vec(300 * 3, &mut rng);
        let x = DMatrix::from_column_slice(300, 3, z.as_slice());
        let surface = Surface::Index {
            weights: vec![DVector::from_column_slice(&w)],
            curves: vec![Box::new(|v: f64| v.sin() + 0.3 * v)],
        };
        let cond = ConditionalModel::Kernel { bandwidth: Bandwidth::Silverman };
        let phi = group_importance(&surface, &x, &[0], &cond).unwrap().unwrap();
        prop_assert!((0.0..=1.0).contains(&phi.phi));
    }
}

#[test]
fn constant_surface_has_no_importance() {
    let x = DMatrix::from_fn(50, 2, |i, j| (i * (j + 1)) as f64);
    let surface = Surface::General(Box::new(|_x: &[f64]| 3.0));
    let cond = ConditionalModel::default();
    assert!(group_importance(&surface, &x, &[0], &cond).unwrap().is_none());
}

#[test]
fn excluded_exposure_is_unimportant() {
    let mut rng = rng_from_seed(5);
    let z = mixborrow::linalg::std_normal_vec(1000 * 2, &mut rng);
    let x = DMatrix::from_column_slice(1000, 2, z.as_slice());
    let surface = Surface::General(Box::new(|x: &[f64]| x[0].powi(2)));
    let cond = ConditionalModel::Kernel { bandwidth: Bandwidth::Silverman };
    let phi0 = group_importance(&surface, &x, &[0], &cond).unwrap().unwrap();
    let phi1 = group_importance(&surface, &x, &[1], &cond).unwrap().unwrap();
    assert!(phi0.phi > 0.8, "{phi0:?}");
    assert!(phi1.phi < 0.05, "{phi1:?}");
}

fn tiny_chain() -> mixborrow::ChainOutput {
    let x = mixborrow::simulate::gen_var_exposures(40, 2, 4, 3).unwrap();
    let y = DMatrix::from_fn(40, 2, |i, k| x[(i, 0)] * (k as f64 + 1.0) + 0.1 * (i % 3) as f64);
    let data = Dataset::new(y, x, None).unwrap();
    let spec = build_dlnm_spec(2, 4, None).unwrap().with_outcomes(2);
    run_chain(&spec, &data, 60, 20, 2, 8).unwrap()
}

#[test]
fn heatmap_is_symmetric_with_unit_diagonal() {
    let chain = tiny_chain();
    let h = pairwise_clustering(&chain).unwrap();
    for m in [&h.prob_beta, &h.prob_theta] {
        assert_eq!(m.nrows(), 4);
        assert!((m - m.transpose()).amax() < 1e-15);
        assert!((0..4).all(|i| m[(i, i)] == 1.0));
        assert!(m.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn chain_dump_round_trips() {
    let chain = tiny_chain();
    let dir = tempfile::tempdir().unwrap();
    mixborrow::io::write_chain(dir.path(), &chain, true).unwrap();
    let back = mixborrow::io::read_chain(dir.path()).unwrap();
    assert_eq!(back.draws.len(), chain.draws.len());
    assert_eq!(back.meta, chain.meta);
    assert_eq!(back.model, chain.model);
    for (a, b) in chain.draws.iter().zip(&back.draws) {
        assert_eq!(a.cluster.z_beta, b.cluster.z_beta);
        assert_eq!(a.cluster.z_theta, b.cluster.z_theta);
        assert_eq!(a.cluster.v_beta, b.cluster.v_beta);
        assert_eq!(a.cluster.beta_atoms, b.cluster.beta_atoms);
        assert_eq!(a.cluster.theta_atoms, b.cluster.theta_atoms);
        assert_eq!(a.sigma2, b.sigma2);
        assert_eq!(a.u, b.u);
        assert_eq!((a.xi, a.lambda_beta, a.lambda_theta), (b.xi, b.lambda_beta, b.lambda_theta));
    }
    assert_eq!(back.loglik, chain.loglik);
}

#[test]
fn fitted_draws_keep_mim_weights_on_sphere() {
    let x = DMatrix::from_fn(60, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let y = DMatrix::from_fn(60, 1, |i, _| x[(i, 0)] - x[(i, 2)]);
    let data = Dataset::new(y, x, None).unwrap();
    let spec = build_mim_spec(3, 2).unwrap();
    let chain = run_chain(&spec, &data, 40, 10, 1, 4).unwrap();
    for d in &chain.draws {
        for t in &d.cluster.theta_atoms {
            assert!((t.norm() - 1.0).abs() < 1e-10);
        }
    }
}
