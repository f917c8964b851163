mod common;

use common::{mean_se, normal_pdf, simpson_2d};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use smoothdiff::estimators::{
    estimate_gradient, estimate_gradient_fd, estimate_gradient_fr22, estimate_hessian, estimate_hvp,
    greybox_gradient, greybox_hessian, Counted, EstimatorConfig, FnObjective, Objective, SamplingMode,
};
use smoothdiff::kernels::KernelSpec;
use smoothdiff::samplers::RngStream;
use smoothdiff::tasks::{negated_gaussian_task, quad_task};
use smoothdiff::Error;

const MODES: [SamplingMode; 3] = [SamplingMode::PerElementIS, SamplingMode::AggregateIS, SamplingMode::Uniform];

fn neg_gauss(x: f64, y: f64) -> f64 {
    -normal_pdf(x, 1.0) * normal_pdf(y, 1.0)
}

/// Smoothed derivatives of the negated Gaussian by quadrature against
/// explicit Gaussian-derivative kernels.
fn quadrature_derivatives(theta: [f64; 2], sigma: f64) -> (DVector<f64>, DMatrix<f64>) {
    let s2 = sigma * sigma;
    let lim = (-8.0 * sigma, 8.0 * sigma);
    let smooth = |k: &dyn Fn(f64, f64) -> f64| {
        simpson_2d(
            &|a, b| neg_gauss(theta[0] - a, theta[1] - b) * k(a, b) * normal_pdf(a, sigma) * normal_pdf(b, sigma),
            lim,
            lim,
            1e-11,
        )
    };
    let g = DVector::from_vec(vec![smooth(&|a, _| -a / s2), smooth(&|_, b| -b / s2)]);
    let hxx = smooth(&|a, _| a * a / (s2 * s2) - 1.0 / s2);
    let hyy = smooth(&|_, b| b * b / (s2 * s2) - 1.0 / s2);
    let hxy = smooth(&|a, b| a * b / (s2 * s2));
    (g, DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]))
}

#[test]
fn quadrature_oracle_agrees_with_closed_form() {
    let task = negated_gaussian_task(1.0).unwrap();
    let theta = [0.7, -0.4];
    let (g, h) = quadrature_derivatives(theta, 0.8);
    let t = DVector::from_row_slice(&theta);
    let closed = task.smoothed_gradient(&t, 0.8).unwrap();
    assert!((&closed - &g).amax() < 1e-5 * closed.amax(), "{closed} vs {g}");
    let closed_h = task.smoothed_hessian(&t, 0.8).unwrap();
    assert!((&closed_h - &h).amax() < 1e-5 * closed_h.amax(), "{closed_h} vs {h}");
}

fn check_within(label: &str, draws: &[DVector<f64>], expected: &DVector<f64>) {
    for i in 0..expected.len() {
        let xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let (mean, se) = mean_se(&xs);
        assert!(
            (mean - expected[i]).abs() <= 4.0 * se,
            "{label}[{i}]: {mean} ± {se} vs {}",
            expected[i]
        );
    }
}

#[test]
fn estimates_are_unbiased_for_smoothed_derivatives() {
    let task = negated_gaussian_task(1.0).unwrap();
    let theta_arr = [0.7, -0.4];
    let theta = DVector::from_row_slice(&theta_arr);
    let sigma = 0.8;
    let (g_true, h_true) = quadrature_derivatives(theta_arr, sigma);
    let v = DVector::from_vec(vec![0.6, -1.3]);
    let hv_true = &h_true * &v;
    let h_flat = DVector::from_vec(vec![h_true[(0, 0)], h_true[(0, 1)], h_true[(1, 1)]]);
    let spec = KernelSpec::new(sigma, 2).unwrap();
    for (m, mode) in MODES.into_iter().enumerate() {
        let cfg = EstimatorConfig::new(spec, 50, mode).unwrap();
        let mut rng = RngStream::new(21, m as u64);
        let reps = 400;
        let mut gs = Vec::new();
        let mut hs = Vec::new();
        let mut hvs = Vec::new();
        for _ in 0..reps {
            gs.push(estimate_gradient(&task, &theta, &cfg, &mut rng).unwrap().g);
            let h = estimate_hessian(&task, &theta, &cfg, &mut rng).unwrap().h;
            assert_eq!(h[(0, 1)], h[(1, 0)]);
            hs.push(DVector::from_vec(vec![h[(0, 0)], h[(0, 1)], h[(1, 1)]]));
            hvs.push(estimate_hvp(&task, &theta, &v, &cfg, &mut rng).unwrap().hv);
        }
        check_within(&format!("{mode:?} gradient"), &gs, &g_true);
        check_within(&format!("{mode:?} hessian"), &hs, &h_flat);
        check_within(&format!("{mode:?} hvp"), &hvs, &hv_true);
    }
}

#[test]
fn baseline_keeps_estimates_unbiased() {
    let task = negated_gaussian_task(1.0).unwrap();
    let theta = DVector::from_vec(vec![-0.3, 0.5]);
    let sigma = 0.6;
    let (_, h_true) = quadrature_derivatives([-0.3, 0.5], sigma);
    let spec = KernelSpec::new(sigma, 2).unwrap();
    let cfg = EstimatorConfig::new(spec, 40, SamplingMode::AggregateIS).unwrap().with_baseline(Some(-0.2));
    let mut rng = RngStream::new(22, 0);
    let hs: Vec<DVector<f64>> = (0..400)
        .map(|_| {
            let h = estimate_hessian(&task, &theta, &cfg, &mut rng).unwrap().h;
            DVector::from_vec(vec![h[(0, 0)], h[(0, 1)], h[(1, 1)]])
        })
        .collect();
    check_within("baseline hessian", &hs, &DVector::from_vec(vec![h_true[(0, 0)], h_true[(0, 1)], h_true[(1, 1)]]));
}

#[test]
fn axis_blur_gradient_is_unbiased_on_quadratic() {
    let task = quad_task();
    let theta = DVector::from_vec(vec![1.0, -0.5]);
    let g_true = task.analytic_gradient(&theta).unwrap();
    let cfg = EstimatorConfig::new(KernelSpec::new(0.5, 2).unwrap(), 20, SamplingMode::PerElementIS).unwrap();
    let mut rng = RngStream::new(23, 0);
    let gs: Vec<DVector<f64>> =
        (0..300).map(|_| estimate_gradient_fr22(&task, &theta, &cfg, &mut rng).unwrap().g).collect();
    check_within("axis blur", &gs, &g_true);
}

#[test]
fn finite_differences_match_analytic_gradient() {
    let task = quad_task();
    let theta = DVector::from_vec(vec![0.4, 1.2]);
    let fd = estimate_gradient_fd(&task, &theta, 1e-5).unwrap();
    assert!((fd.g - task.analytic_gradient(&theta).unwrap()).amax() < 1e-8);
    assert_eq!(fd.evals_used, 4);
    assert!(estimate_gradient_fd(&task, &theta, 0.0).is_err());
}

#[test]
fn greybox_chain_rule_through_linear_map() {
    // outer: quadratic with known derivatives; inner: fixed 2x3 linear map
    let j = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 2.0, 0.3, 1.5, -1.0]);
    let task = quad_task();
    let y = DVector::from_vec(vec![0.2, -0.7]);
    let cfg = EstimatorConfig::new(KernelSpec::new(0.3, 2).unwrap(), 2000, SamplingMode::AggregateIS).unwrap();
    let mut rng = RngStream::new(24, 0);
    let g = estimate_gradient(&task, &y, &cfg, &mut rng).unwrap();
    let h = estimate_hessian(&task, &y, &cfg, &mut rng).unwrap();
    let cg = greybox_gradient(&j, &g).unwrap();
    let ch = greybox_hessian(&j, &h).unwrap();
    assert_eq!(cg.g.len(), 3);
    assert_eq!(ch.h.shape(), (3, 3));
    assert_eq!(cg.evals_used, g.evals_used);
    assert!((cg.g - j.transpose() * &g.g).amax() < 1e-12);
    let expect = j.transpose() * &h.h * &j;
    assert!((&ch.h - &expect).amax() < 1e-10);
    assert!((&ch.h - ch.h.transpose()).amax() == 0.0);
    let bad = DMatrix::<f64>::zeros(3, 3);
    assert!(matches!(greybox_gradient(&bad, &g), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn nonfinite_objective_aborts() {
    let f = FnObjective::new(2, |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { 0.0 });
    let cfg = EstimatorConfig::new(KernelSpec::new(1.0, 2).unwrap(), 50, SamplingMode::AggregateIS).unwrap();
    let mut rng = RngStream::new(25, 0);
    let err = estimate_gradient(&f, &DVector::zeros(2), &cfg, &mut rng).unwrap_err();
    assert!(matches!(err, Error::NonFiniteObjective { .. }), "{err}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let cfg = EstimatorConfig::new(KernelSpec::new(1.0, 3).unwrap(), 1, SamplingMode::AggregateIS).unwrap();
    let mut rng = RngStream::new(26, 0);
    let theta = DVector::zeros(2);
    assert!(matches!(
        estimate_gradient(&quad_task(), &theta, &cfg, &mut rng),
        Err(Error::DimensionMismatch { .. })
    ));
    let cfg2 = EstimatorConfig::new(KernelSpec::new(1.0, 2).unwrap(), 1, SamplingMode::AggregateIS).unwrap();
    assert!(estimate_hvp(&quad_task(), &theta, &DVector::zeros(2), &cfg2, &mut rng).is_err());
}

fn mode_strategy() -> impl Strategy<Value = SamplingMode> {
    prop_oneof![Just(SamplingMode::PerElementIS), Just(SamplingMode::AggregateIS), Just(SamplingMode::Uniform)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluation_counts_follow_cost_model(n in 1usize..7, m in 1usize..5, mode in mode_strategy(), seed in any::<u64>()) {
        let obj = Counted::new(FnObjective::new(n, |x: &[f64]| x.iter().map(|v| v.sin()).sum::<f64>()));
        let theta = DVector::from_element(n, 0.1);
        let cfg = EstimatorConfig::new(KernelSpec::new(0.5, n).unwrap(), m, mode).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let m = m as u64;
        let n64 = n as u64;
        let per_element = mode == SamplingMode::PerElementIS;

        let before = obj.evals();
        let g = estimate_gradient(&obj, &theta, &cfg, &mut rng).unwrap();
        prop_assert_eq!(obj.evals() - before, g.evals_used);
        prop_assert_eq!(g.evals_used, if per_element { 2 * n64 * m } else { 2 * m });

        let before = obj.evals();
        let h = estimate_hessian(&obj, &theta, &cfg, &mut rng).unwrap();
        prop_assert_eq!(obj.evals() - before, h.evals_used);
        prop_assert_eq!(h.evals_used, if per_element { n64 * (n64 + 1) * m } else { 2 * m });

        let before = obj.evals();
        let v = DVector::from_element(n, 1.0);
        let hv = estimate_hvp(&obj, &theta, &v, &cfg, &mut rng).unwrap();
        prop_assert_eq!(obj.evals() - before, hv.evals_used);
        prop_assert_eq!(hv.evals_used, if per_element { 2 * n64 * m } else { 2 * m });

        let before = obj.evals();
        let fr = estimate_gradient_fr22(&obj, &theta, &cfg, &mut rng).unwrap();
        prop_assert_eq!(obj.evals() - before, fr.evals_used);
        prop_assert_eq!(fr.evals_used, 2 * n64 * m);

        let before = obj.evals();
        estimate_gradient_fd(&obj, &theta, 1e-4).unwrap();
        prop_assert_eq!(obj.evals() - before, 2 * n64);
    }

    #[test]
    fn constant_objective_has_exactly_zero_derivatives(c in -5.0f64..5.0, mode in mode_strategy(), seed in any::<u64>()) {
        let obj = FnObjective::new(3, move |_: &[f64]| c);
        let theta = DVector::from_vec(vec![0.2, -1.0, 3.0]);
        let cfg = EstimatorConfig::new(KernelSpec::new(0.9, 3).unwrap(), 4, mode).unwrap();
        let mut rng = RngStream::new(seed, 0);
        prop_assert!(estimate_gradient(&obj, &theta, &cfg, &mut rng).unwrap().g.iter().all(|&x| x == 0.0));
        let with_base = cfg.with_baseline(Some(c));
        prop_assert!(estimate_hessian(&obj, &theta, &with_base, &mut rng).unwrap().h.iter().all(|&x| x == 0.0));
        let v = DVector::from_vec(vec![1.0, 0.5, -2.0]);
        prop_assert!(estimate_hvp(&obj, &theta, &v, &with_base, &mut rng).unwrap().hv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn estimates_are_reproducible(seed in any::<u64>(), mode in mode_strategy()) {
        let task = negated_gaussian_task(1.0).unwrap();
        let theta = DVector::from_vec(vec![0.3, 0.1]);
        let cfg = EstimatorConfig::new(KernelSpec::new(0.7, 2).unwrap(), 3, mode).unwrap();
        let a = estimate_hessian(&task, &theta, &cfg, &mut RngStream::new(seed, 1)).unwrap();
        let b = estimate_hessian(&task, &theta, &cfg, &mut RngStream::new(seed, 1)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn objective_trait_objects_forward() {
    let task = quad_task();
    let arc = std::sync::Arc::new(quad_task());
    let dyn_obj: &dyn Objective = &arc;
    assert_eq!(dyn_obj.dim(), 2);
    assert_eq!(dyn_obj.evaluate(&[1.0, 1.0]), task.loss(&[1.0, 1.0]));
}
