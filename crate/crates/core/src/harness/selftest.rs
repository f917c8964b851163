//! Quick invariant checks over kernels, samplers and estimators.

use nalgebra::DVector;

use crate::error::Result;
use crate::estimators::{estimate_gradient, estimate_hessian, Counted, EstimatorConfig, FnObjective, SamplingMode};
use crate::kernels::{
    gaussian_pdf, gradient_cdf, gradient_kernel, hessian_diag_cdf, hessian_kernel, KernelElement, KernelSpec,
};
use crate::samplers::{sample_gradient_offset, sample_hessian_offset, RngStream, TabulatedInverseCdf};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Asymptotic Kolmogorov p-value for statistic `d` at sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max((((k + 1) as f64) / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn check(name: &'static str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck { name, passed, detail }
}

fn kernel_derivatives(rng: &mut RngStream) -> Result<SelfCheck> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let sigma = rng.uniform(0.1, 3.0);
        let spec = KernelSpec::new(sigma, 2)?;
        let tau = [rng.uniform(-2.0, 2.0) * sigma, rng.uniform(-2.0, 2.0) * sigma];
        let h = 1e-4 * sigma;
        let f = |t: [f64; 2]| gaussian_pdf(&t, &spec);
        let fd = (f([tau[0] + h, tau[1]])? - f([tau[0] - h, tau[1]])?) / (2.0 * h);
        worst = worst.max((gradient_kernel(&tau, 0, &spec)? - fd).abs());
        let g = |t: [f64; 2]| gradient_kernel(&t, 0, &spec);
        let fd2 = (g([tau[0] + h, tau[1]])? - g([tau[0] - h, tau[1]])?) / (2.0 * h);
        // Second derivatives grow like σ⁻⁴; compare on that scale.
        let scaled = (hessian_kernel(&tau, KernelElement::hessian(0, 0), &spec)? - fd2).abs() * sigma.powi(4);
        worst = worst.max(scaled);
    }
    Ok(check("kernel derivatives match finite differences", worst < 1e-6, format!("max error {worst:.2e}")))
}

fn sampler_ks(rng: &mut RngStream) -> Result<Vec<SelfCheck>> {
    let sigma = 0.7;
    let spec = KernelSpec::new(sigma, 3)?;
    let n = 20_000;
    let mut g: Vec<f64> =
        (0..n).map(|_| sample_gradient_offset(1, &spec, rng).map(|s| s.tau[1])).collect::<Result<_>>()?;
    let dg = ks_statistic(&mut g, |u| gradient_cdf(u, sigma));
    let pg = ks_p_value(dg, n);
    let table = TabulatedInverseCdf::shared();
    let mut h: Vec<f64> = (0..n)
        .map(|_| sample_hessian_offset(KernelElement::hessian(2, 2), &spec, table, rng).map(|s| s.tau[2]))
        .collect::<Result<_>>()?;
    let dh = ks_statistic(&mut h, |u| hessian_diag_cdf(u, sigma));
    let ph = ks_p_value(dh, n);
    Ok(vec![
        check("gradient sampler KS", pg > 1e-3, format!("D = {dg:.4}, p = {pg:.3}")),
        check("hessian-diagonal sampler KS", ph > 1e-3, format!("D = {dh:.4}, p = {ph:.3}")),
        check(
            "hessian-diagonal CDF at -sigma",
            hessian_diag_cdf(-sigma, sigma) == 0.25,
            format!("{}", hessian_diag_cdf(-sigma, sigma)),
        ),
    ])
}

fn table_round_trip() -> Result<SelfCheck> {
    let table = TabulatedInverseCdf::build_hessian_diag_table(8192)?;
    let worst = (1..1000)
        .map(|k| {
            let xi = k as f64 / 1000.0;
            (hessian_diag_cdf(table.lookup(xi), 1.0) - xi).abs()
        })
        .fold(0.0, f64::max);
    Ok(check("tabulated inverse round trip", worst <= 1e-3, format!("max error {worst:.2e}")))
}

fn estimator_invariants(rng: &mut RngStream) -> Result<Vec<SelfCheck>> {
    let n = 4;
    let spec = KernelSpec::new(0.5, n)?;
    let theta = DVector::from_element(n, 0.3);
    let constant = Counted::new(FnObjective::new(n, |_: &[f64]| 3.0));
    let mut out = Vec::new();
    let mut zero = true;
    for mode in [SamplingMode::PerElementIS, SamplingMode::AggregateIS, SamplingMode::Uniform] {
        let cfg = EstimatorConfig::new(spec, 16, mode)?;
        zero &= estimate_gradient(&constant, &theta, &cfg, rng)?.g.iter().all(|&x| x == 0.0);
    }
    out.push(check("constant objective has zero gradient", zero, String::new()));
    let mut counts = Vec::new();
    let mut ok = true;
    for (mode, per_pair) in [(SamplingMode::AggregateIS, 2), (SamplingMode::PerElementIS, n * (n + 1))] {
        let cfg = EstimatorConfig::new(spec, 8, mode)?;
        let before = constant.evals();
        let est = estimate_hessian(&constant, &theta, &cfg, rng)?;
        let used = constant.evals() - before;
        ok &= used == est.evals_used && used == 8 * per_pair as u64;
        counts.push(format!("{mode:?}: {used}"));
    }
    out.push(check("hessian evaluation counts", ok, counts.join(", ")));
    Ok(out)
}

/// Runs every check with streams derived from `seed`.
pub fn selftest(seed: u64) -> Result<Vec<SelfCheck>> {
    let mut rng = RngStream::new(seed, 0);
    let mut out = vec![kernel_derivatives(&mut rng)?];
    out.extend(sampler_ks(&mut rng.fork(1))?);
    out.push(table_round_trip()?);
    out.extend(estimator_invariants(&mut rng.fork(2))?);
    Ok(out)
}
