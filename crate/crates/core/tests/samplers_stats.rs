mod common;

use common::{chi2_p_value, ks_p_value, ks_statistic, mean_se};
use proptest::prelude::*;
use smoothdiff::kernels::{gradient_cdf, hessian_diag_cdf, KernelElement, KernelSpec};
use smoothdiff::samplers::{
    antithetic_pair, element_pdf, mixture_pdf, sample_aggregate_offset, sample_element_offset, sample_gradient_offset,
    sample_hessian_offset, sample_uniform_offset, RngStream, SampleSource, TabulatedInverseCdf,
};
use statrs::distribution::{ContinuousCDF, Normal};

const N: usize = 20_000;
const ALPHA: f64 = 1e-3;

fn normal_cdf(sigma: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(0.0, sigma).unwrap();
    move |x| d.cdf(x)
}

#[test]
fn gradient_sampler_marginals() {
    let sigma = 1.4;
    let spec = KernelSpec::new(sigma, 3).unwrap();
    let mut rng = RngStream::new(11, 0);
    let draws: Vec<Vec<f64>> = (0..N).map(|_| sample_gradient_offset(2, &spec, &mut rng).unwrap().tau).collect();
    let axis: Vec<f64> = draws.iter().map(|t| t[2]).collect();
    let other: Vec<f64> = draws.iter().map(|t| t[0]).collect();
    let p = ks_p_value(ks_statistic(&axis, &|u| gradient_cdf(u, sigma)), N);
    assert!(p > ALPHA, "gradient axis p = {p}");
    let p = ks_p_value(ks_statistic(&other, &normal_cdf(sigma)), N);
    assert!(p > ALPHA, "gaussian axis p = {p}");
}

#[test]
fn hessian_sampler_marginals() {
    let sigma = 0.6;
    let spec = KernelSpec::new(sigma, 3).unwrap();
    let table = TabulatedInverseCdf::shared();
    let mut rng = RngStream::new(12, 0);
    let diag: Vec<f64> = (0..N)
        .map(|_| sample_hessian_offset(KernelElement::hessian(1, 1), &spec, table, &mut rng).unwrap().tau[1])
        .collect();
    let p = ks_p_value(ks_statistic(&diag, &|u| hessian_diag_cdf(u, sigma)), N);
    assert!(p > ALPHA, "diagonal p = {p}");
    let off: Vec<Vec<f64>> = (0..N)
        .map(|_| sample_hessian_offset(KernelElement::hessian(2, 0), &spec, table, &mut rng).unwrap().tau)
        .collect();
    for (axis, cdf) in [(0usize, true), (2, true), (1, false)] {
        let xs: Vec<f64> = off.iter().map(|t| t[axis]).collect();
        let d = if cdf {
            ks_statistic(&xs, &|u| gradient_cdf(u, sigma))
        } else {
            ks_statistic(&xs, &normal_cdf(sigma))
        };
        assert!(ks_p_value(d, N) > ALPHA, "off-diagonal axis {axis}");
    }
    // independent coordinates: sign quadrants are equally likely
    let mut counts = [0u64; 4];
    for t in &off {
        counts[(t[0] > 0.0) as usize * 2 + (t[2] > 0.0) as usize] += 1;
    }
    assert!(chi2_p_value(&counts, &[0.25; 4]) > ALPHA);
}

#[test]
fn hessian_sampler_rejects_gradient_elements() {
    let spec = KernelSpec::new(1.0, 2).unwrap();
    let mut rng = RngStream::new(0, 0);
    assert!(sample_hessian_offset(KernelElement::GradientDim(0), &spec, TabulatedInverseCdf::shared(), &mut rng).is_err());
    assert!(sample_gradient_offset(2, &spec, &mut rng).is_err());
}

#[test]
fn aggregate_sampler_is_uniform_mixture() {
    let sigma = 0.9;
    let n = 4;
    let spec = KernelSpec::new(sigma, n).unwrap();
    let elems = KernelElement::gradient_elements(n);
    let mut rng = RngStream::new(13, 0);
    let xs: Vec<f64> = (0..N)
        .map(|_| sample_aggregate_offset(&elems, &spec, TabulatedInverseCdf::shared(), &mut rng).unwrap().tau[0])
        .collect();
    let phi = normal_cdf(sigma);
    let w = 1.0 / n as f64;
    let p = ks_p_value(ks_statistic(&xs, &|u| w * gradient_cdf(u, sigma) + (1.0 - w) * phi(u)), N);
    assert!(p > ALPHA, "mixture marginal p = {p}");
}

#[test]
fn aggregate_pdf_is_mixture_of_element_pdfs() {
    let spec = KernelSpec::new(0.7, 3).unwrap();
    let elems = KernelElement::hessian_elements(3);
    let mut rng = RngStream::new(14, 0);
    for _ in 0..50 {
        let s = sample_aggregate_offset(&elems, &spec, TabulatedInverseCdf::shared(), &mut rng).unwrap();
        assert_eq!(s.source, SampleSource::Mixture);
        let direct: f64 =
            elems.iter().map(|e| element_pdf(*e, &s.tau, &spec).unwrap()).sum::<f64>() / elems.len() as f64;
        assert!((s.pdf_value() - direct).abs() <= 1e-12 * direct);
        assert!((mixture_pdf(&elems, &s.tau, &spec).unwrap() - direct).abs() <= 1e-12 * direct);
    }
    assert!(sample_aggregate_offset(&[], &spec, TabulatedInverseCdf::shared(), &mut rng).is_err());
}

#[test]
fn uniform_sampler_covers_ten_sigma_box() {
    let sigma = 0.5;
    let spec = KernelSpec::new(sigma, 2).unwrap();
    let mut rng = RngStream::new(15, 0);
    let xs: Vec<f64> = (0..N).map(|_| sample_uniform_offset(&spec, &mut rng).tau[1]).collect();
    let half = 10.0 * sigma;
    assert!(xs.iter().all(|x| x.abs() <= half));
    let p = ks_p_value(ks_statistic(&xs, &|u| ((u + half) / (2.0 * half)).clamp(0.0, 1.0)), N);
    assert!(p > ALPHA);
    let s = sample_uniform_offset(&spec, &mut rng);
    assert!((s.pdf_value() - 1.0 / (2.0 * half).powi(2)).abs() < 1e-12);
}

#[test]
fn tabulated_inverse_round_trip() {
    let table = TabulatedInverseCdf::build_hessian_diag_table(8192).unwrap();
    let worst = (1..10_000)
        .map(|k| {
            let xi = k as f64 / 10_000.0;
            (hessian_diag_cdf(table.lookup(xi), 1.0) - xi).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
    assert!(TabulatedInverseCdf::build_hessian_diag_table(1).is_err());
}

#[test]
fn importance_weights_average_to_one() {
    // E_p[N(τ) / p(τ)] = 1 for any proposal p covering the Gaussian
    let spec = KernelSpec::new(1.1, 2).unwrap();
    let mut rng = RngStream::new(16, 0);
    let elems = KernelElement::hessian_elements(2);
    let w: Vec<f64> = (0..N)
        .map(|_| {
            let s = sample_aggregate_offset(&elems, &spec, TabulatedInverseCdf::shared(), &mut rng).unwrap();
            smoothdiff::kernels::gaussian_pdf(&s.tau, &spec).unwrap() / s.pdf_value()
        })
        .collect();
    let (mean, se) = mean_se(&w);
    assert!((mean - 1.0).abs() < 4.0 * se, "{mean} ± {se}");
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let mut a = RngStream::new(42, 3);
    let mut b = RngStream::new(42, 3);
    let mut c = RngStream::new(42, 4);
    let xa: Vec<f64> = (0..8).map(|_| a.standard_normal()).collect();
    let xb: Vec<f64> = (0..8).map(|_| b.standard_normal()).collect();
    let xc: Vec<f64> = (0..8).map(|_| c.standard_normal()).collect();
    assert_eq!(xa, xb);
    assert_ne!(xa, xc);
    assert_eq!(a.fork(9).uniform_open(), RngStream::new(42, 9).uniform_open());
}

proptest! {
    #[test]
    fn antithetic_halves_mirror(seed in any::<u64>(), i in 0usize..3, j in 0usize..3) {
        let spec = KernelSpec::new(0.8, 3).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let s = sample_element_offset(KernelElement::hessian(i, j), &spec, TabulatedInverseCdf::shared(), &mut rng).unwrap();
        let (p, m) = antithetic_pair(s.clone());
        prop_assert_eq!(&p.tau, &s.tau);
        for (a, b) in p.tau.iter().zip(&m.tau) {
            prop_assert_eq!(*a, -*b);
        }
        prop_assert_eq!(p.log_pdf, m.log_pdf);
        let direct = element_pdf(KernelElement::hessian(i, j), &s.tau, &spec).unwrap();
        prop_assert!((s.pdf_value() - direct).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn uniform_draws_lie_in_open_interval(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        for _ in 0..64 {
            let u = rng.uniform_open();
            prop_assert!(u > 0.0 && u < 1.0);
        }
    }
}
