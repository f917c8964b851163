//! Monte-Carlo estimators of the Gaussian-smoothed gradient, Hessian and
//! Hessian-vector product of a black-box objective.
//!
//! For a smoothing kernel `κ` and a derivative operator `D`, the smoothed
//! derivative at `θ` is `∫ Dκ(τ) f(θ − τ) dτ`. Offsets are drawn from the
//! positivized kernel densities in [`crate::samplers`] and every draw is used
//! as an antithetic pair `(τ, −τ)`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{
    gradient_density_ratio, kernel_ratio, unit_gradient_inverse_cdf, KernelElement, KernelSpec,
};
use crate::samplers::{
    draw_element_into, draw_uniform_into, element_density_ratio, log_gaussian,
    log_uniform_density, mixture_ratio, RngStream, TabulatedInverseCdf,
};

/// Black-box scalar objective. `evaluate` may be stochastic.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> f64;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        (**self).evaluate(theta)
    }
}

impl<T: Objective + ?Sized> Objective for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        (**self).evaluate(theta)
    }
}

/// Closure-backed objective.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

/// Wraps an objective and counts every `evaluate` call.
pub struct Counted<O> {
    inner: O,
    count: AtomicU64,
}

impl<O: Objective> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }

    pub fn evals(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Objective> Objective for Counted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(theta)
    }
}

/// How offsets are distributed across the elements of a derivative object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SamplingMode {
    /// Separate draws per element, each from that element's own density.
    PerElementIS,
    /// One draw from the uniform mixture of all element densities, shared by
    /// every element.
    AggregateIS,
    /// One draw from the uniform density on `[-10σ, 10σ]^n`, shared by every
    /// element. Comparison baseline only.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub spec: KernelSpec,
    /// Antithetic pairs per estimate (per element in per-element mode).
    pub samples: usize,
    pub mode: SamplingMode,
    hvp_epsilon: Option<f64>,
    baseline: Option<f64>,
}

impl EstimatorConfig {
    pub fn new(spec: KernelSpec, samples: usize, mode: SamplingMode) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("samples", "must be >= 1"));
        }
        Ok(Self { spec, samples, mode, hvp_epsilon: None, baseline: None })
    }

    /// Fixed HVP difference step. Without it the step is `1e-2 · σ`.
    pub fn with_hvp_epsilon(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid("hvp_epsilon", format!("must be > 0, got {eps}")));
        }
        self.hvp_epsilon = Some(eps);
        Ok(self)
    }

    /// Constant subtracted from every objective value before weighting.
    ///
    /// Every derivative kernel integrates to zero, so any constant that does
    /// not depend on the current draws leaves the estimate unbiased. For the
    /// even Hessian and HVP kernels, a baseline near the local objective level
    /// removes most of the variance carried by the objective's offset.
    pub fn with_baseline(mut self, baseline: Option<f64>) -> Self {
        self.baseline = baseline.filter(|b| b.is_finite());
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.spec = self.spec.with_sigma(sigma)?;
        Ok(self)
    }

    pub fn hvp_epsilon(&self) -> f64 {
        self.hvp_epsilon.unwrap_or(1e-2 * self.spec.sigma())
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: DVector<f64>,
    pub evals_used: u64,
    /// Standard error of each entry, from the spread of per-pair contributions.
    pub std_error: Option<DVector<f64>>,
    /// Mean of all objective values the estimate evaluated.
    pub mean_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub h: DMatrix<f64>,
    pub evals_used: u64,
    pub std_error: Option<DMatrix<f64>>,
    pub mean_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvpEstimate {
    pub hv: DVector<f64>,
    pub direction: DVector<f64>,
    pub evals_used: u64,
    pub std_error: Option<DVector<f64>>,
}

/// Running mean and variance per element over antithetic pairs.
struct PairStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PairStats {
    fn new(k: usize) -> Self {
        Self { count: 0, mean: vec![0.0; k], m2: vec![0.0; k] }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn std_error(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![f64::NAN; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Evaluates `f(θ − sign·τ)`, counting and checking finiteness.
struct Evaluator<'a> {
    obj: &'a dyn Objective,
    theta: &'a [f64],
    buf: Vec<f64>,
    evals: u64,
    value_sum: f64,
}

impl<'a> Evaluator<'a> {
    fn new(obj: &'a dyn Objective, theta: &'a [f64]) -> Self {
        Self { obj, theta, buf: vec![0.0; theta.len()], evals: 0, value_sum: 0.0 }
    }

    fn at_offset(&mut self, tau: &[f64], sign: f64) -> Result<f64> {
        for ((b, t), o) in self.buf.iter_mut().zip(self.theta).zip(tau) {
            *b = t - sign * o;
        }
        self.eval_buf()
    }

    fn at_axis(&mut self, axis: usize, delta: f64) -> Result<f64> {
        self.buf.copy_from_slice(self.theta);
        self.buf[axis] += delta;
        self.eval_buf()
    }

    fn eval_buf(&mut self) -> Result<f64> {
        let v = self.obj.evaluate(&self.buf);
        self.evals += 1;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { point: self.buf.clone(), value: v });
        }
        self.value_sum += v;
        Ok(v)
    }

    fn mean_value(&self) -> Option<f64> {
        (self.evals > 0).then(|| self.value_sum / self.evals as f64)
    }
}

fn check_theta(obj: &dyn Objective, theta: &DVector<f64>, spec: &KernelSpec) -> Result<()> {
    if obj.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: obj.dim() });
    }
    spec.check_len(theta.len())?;
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFiniteState(format!("theta {theta:?}")));
    }
    Ok(())
}

/// Shared engine for kernel-element estimates.
///
/// Returns the per-element mean, standard error and evaluator state.
fn estimate_elements(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    elements: &[KernelElement],
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>, u64, Option<f64>)> {
    let sigma = cfg.spec.sigma();
    let n = cfg.spec.dim();
    let k = elements.len();
    let table = TabulatedInverseCdf::shared();
    let base = cfg.baseline.unwrap_or(0.0);
    let mut ev = Evaluator::new(obj, theta.as_slice());
    let mut stats = PairStats::new(k);
    let mut tau = vec![0.0; n];
    let mut contrib = vec![0.0; k];

    for _ in 0..cfg.samples {
        match cfg.mode {
            SamplingMode::PerElementIS => {
                for (c, &elem) in contrib.iter_mut().zip(elements) {
                    draw_element_into(elem, sigma, table, rng, &mut tau);
                    let fm = ev.at_offset(&tau, 1.0)? - base;
                    let fp = ev.at_offset(&tau, -1.0)? - base;
                    let ratio = element_density_ratio(elem, &tau, sigma);
                    let w = kernel_ratio(&tau, elem, sigma) / ratio;
                    let w_mirror = mirrored_kernel_ratio(&tau, elem, sigma) / ratio;
                    *c = 0.5 * (fm * w + fp * w_mirror);
                }
            }
            SamplingMode::AggregateIS | SamplingMode::Uniform => {
                let inv_ratio = if cfg.mode == SamplingMode::AggregateIS {
                    let pick = elements[rng.index(k)];
                    draw_element_into(pick, sigma, table, rng, &mut tau);
                    1.0 / mixture_ratio(elements, &tau, sigma)
                } else {
                    draw_uniform_into(sigma, rng, &mut tau);
                    (log_gaussian(&tau, sigma) - log_uniform_density(sigma, n)).exp()
                };
                let fm = ev.at_offset(&tau, 1.0)? - base;
                let fp = ev.at_offset(&tau, -1.0)? - base;
                for (c, &elem) in contrib.iter_mut().zip(elements) {
                    let w = kernel_ratio(&tau, elem, sigma) * inv_ratio;
                    let w_mirror = mirrored_kernel_ratio(&tau, elem, sigma) * inv_ratio;
                    *c = 0.5 * (fm * w + fp * w_mirror);
                }
            }
        }
        stats.push(&contrib);
    }
    let se = stats.std_error();
    let mean_value = ev.mean_value();
    Ok((stats.mean, se, ev.evals, mean_value))
}

/// Kernel ratio at `−τ`, using the parity of each kernel element.
#[inline]
fn mirrored_kernel_ratio(tau: &[f64], elem: KernelElement, sigma: f64) -> f64 {
    match elem {
        KernelElement::GradientDim(_) => -kernel_ratio(tau, elem, sigma),
        _ => kernel_ratio(tau, elem, sigma),
    }
}

/// Smoothed gradient estimate.
///
/// Per-element mode spends `2n` evaluations per antithetic pair, aggregate and
/// uniform modes spend 2.
pub fn estimate_gradient(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_theta(obj, theta, &cfg.spec)?;
    let elements = KernelElement::gradient_elements(cfg.spec.dim());
    let (mean, se, evals, mean_value) = estimate_elements(obj, theta, &elements, cfg, rng)?;
    Ok(GradientEstimate {
        g: DVector::from_vec(mean),
        evals_used: evals,
        std_error: Some(DVector::from_vec(se)),
        mean_value,
    })
}

/// Smoothed Hessian estimate over the upper triangle, mirrored into the lower.
pub fn estimate_hessian(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<HessianEstimate> {
    check_theta(obj, theta, &cfg.spec)?;
    let n = cfg.spec.dim();
    let elements = KernelElement::hessian_elements(n);
    let (mean, se, evals, mean_value) = estimate_elements(obj, theta, &elements, cfg, rng)?;
    let mut h = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    for ((elem, m), e) in elements.iter().zip(&mean).zip(&se) {
        let (i, j) = match *elem {
            KernelElement::HessianDiag(i) => (i, i),
            KernelElement::HessianOffDiag(i, j) => (i, j),
            _ => unreachable!("hessian element list"),
        };
        h[(i, j)] = *m;
        h[(j, i)] = *m;
        s[(i, j)] = *e;
        s[(j, i)] = *e;
    }
    Ok(HessianEstimate { h, evals_used: evals, std_error: Some(s), mean_value })
}

/// Gradient estimate that blurs only along the differentiated axis.
///
/// Each dimension gets its own 1D draw and perturbs only its own coordinate,
/// so one antithetic pair costs `2n` evaluations.
pub fn estimate_gradient_fr22(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    check_theta(obj, theta, &cfg.spec)?;
    let n = cfg.spec.dim();
    let sigma = cfg.spec.sigma();
    let base = cfg.baseline.unwrap_or(0.0);
    let mut ev = Evaluator::new(obj, theta.as_slice());
    let mut stats = PairStats::new(n);
    let mut contrib = vec![0.0; n];
    for _ in 0..cfg.samples {
        for (i, c) in contrib.iter_mut().enumerate() {
            let u = loop {
                let u = sigma * unit_gradient_inverse_cdf(rng.uniform_open());
                if u != 0.0 {
                    break u;
                }
            };
            // axis kernel / gradient pdf, both one-dimensional
            let w = -u / (sigma * sigma) / gradient_density_ratio(u, sigma);
            let fm = ev.at_axis(i, -u)? - base;
            let fp = ev.at_axis(i, u)? - base;
            *c = 0.5 * w * (fm - fp);
        }
        stats.push(&contrib);
    }
    let se = stats.std_error();
    Ok(GradientEstimate {
        g: DVector::from_vec(stats.mean),
        evals_used: ev.evals,
        std_error: Some(DVector::from_vec(se)),
        mean_value: ev.mean_value(),
    })
}

/// Central finite differences with `2n` evaluations.
pub fn estimate_gradient_fd(obj: &dyn Objective, theta: &DVector<f64>, step: f64) -> Result<GradientEstimate> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("step", format!("must be > 0, got {step}")));
    }
    if obj.dim() != theta.len() {
        return Err(Error::DimensionMismatch { expected: obj.dim(), got: theta.len() });
    }
    let mut ev = Evaluator::new(obj, theta.as_slice());
    let mut g = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let fp = ev.at_axis(i, step)?;
        let fm = ev.at_axis(i, -step)?;
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(GradientEstimate { g, evals_used: ev.evals, std_error: None, mean_value: ev.mean_value() })
}

/// Smoothed Hessian-vector product `H v`.
///
/// This is the difference of two gradient estimates at `θ ± εu`
/// (`u = v / ‖v‖`) divided by `2ε`, where both gradient estimates reuse the
/// same objective evaluations: a value `f(θ − τ)` serves as the offset
/// `τ + εu` for the estimate at `θ + εu` and as `τ − εu` for `θ − εu`.
/// Offsets for dimension `i` are drawn from the balanced mixture of the two
/// shifted gradient densities, which bounds the weights of the kernel
/// difference. The result is scaled back by `‖v‖`.
///
/// Costs match the gradient estimator: `2n` evaluations per antithetic pair
/// per element, 2 in aggregate and uniform modes.
pub fn estimate_hvp(
    obj: &dyn Objective,
    theta: &DVector<f64>,
    v: &DVector<f64>,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<HvpEstimate> {
    check_theta(obj, theta, &cfg.spec)?;
    cfg.spec.check_len(v.len())?;
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(Error::NonFiniteState(format!("direction {v:?}")));
    }
    if norm == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let n = cfg.spec.dim();
    let sigma = cfg.spec.sigma();
    let s2 = sigma * sigma;
    let eps = cfg.hvp_epsilon();
    let shift: Vec<f64> = v.iter().map(|x| eps * x / norm).collect();
    let shift_sq: f64 = shift.iter().map(|x| x * x).sum();
    let base = cfg.baseline.unwrap_or(0.0);
    let log_unif = log_uniform_density(sigma, n);

    let mut ev = Evaluator::new(obj, theta.as_slice());
    let mut stats = PairStats::new(n);
    let mut tau = vec![0.0; n];
    let mut contrib = vec![0.0; n];

    // Gaussian factors N(τ ± s) / N(τ)
    let gauss_shifts = |tau: &[f64]| {
        let dot: f64 = tau.iter().zip(&shift).map(|(t, s)| t * s).sum();
        let plus = (-(2.0 * dot + shift_sq) / (2.0 * s2)).exp();
        let minus = (-(-2.0 * dot + shift_sq) / (2.0 * s2)).exp();
        (plus, minus)
    };
    // kernel difference for component j, relative to N(τ)
    let numerator = |tau: &[f64], j: usize, ep: f64, em: f64| {
        -((tau[j] + shift[j]) * ep - (tau[j] - shift[j]) * em) / s2
    };
    // balanced shifted proposal for component j, relative to N(τ)
    let proposal = |tau: &[f64], j: usize, ep: f64, em: f64| {
        0.5 * (gradient_density_ratio(tau[j] + shift[j], sigma) * ep
            + gradient_density_ratio(tau[j] - shift[j], sigma) * em)
    };
    let draw_shifted = |i: usize, rng: &mut RngStream, tau: &mut [f64]| {
        draw_element_into(KernelElement::GradientDim(i), sigma, TabulatedInverseCdf::shared(), rng, tau);
        let sign = if rng.uniform_open() < 0.5 { 1.0 } else { -1.0 };
        for (t, s) in tau.iter_mut().zip(&shift) {
            *t -= sign * s;
        }
    };

    for _ in 0..cfg.samples {
        match cfg.mode {
            SamplingMode::PerElementIS => {
                for (j, c) in contrib.iter_mut().enumerate() {
                    draw_shifted(j, rng, &mut tau);
                    let fm = ev.at_offset(&tau, 1.0)? - base;
                    let fp = ev.at_offset(&tau, -1.0)? - base;
                    let (ep, em) = gauss_shifts(&tau);
                    let w = numerator(&tau, j, ep, em) / (2.0 * eps * proposal(&tau, j, ep, em));
                    // kernel difference and proposal are both even in τ
                    *c = 0.5 * w * (fm + fp);
                }
            }
            SamplingMode::AggregateIS | SamplingMode::Uniform => {
                let (ep, em, inv_density) = if cfg.mode == SamplingMode::AggregateIS {
                    let pick = rng.index(n);
                    draw_shifted(pick, rng, &mut tau);
                    let (ep, em) = gauss_shifts(&tau);
                    let q: f64 = (0..n).map(|j| proposal(&tau, j, ep, em)).sum::<f64>() / n as f64;
                    (ep, em, 1.0 / q)
                } else {
                    draw_uniform_into(sigma, rng, &mut tau);
                    let (ep, em) = gauss_shifts(&tau);
                    (ep, em, (log_gaussian(&tau, sigma) - log_unif).exp())
                };
                let fm = ev.at_offset(&tau, 1.0)? - base;
                let fp = ev.at_offset(&tau, -1.0)? - base;
                for (j, c) in contrib.iter_mut().enumerate() {
                    let w = numerator(&tau, j, ep, em) * inv_density / (2.0 * eps);
                    *c = 0.5 * w * (fm + fp);
                }
            }
        }
        stats.push(&contrib);
    }
    let se: Vec<f64> = stats.std_error().into_iter().map(|s| s * norm).collect();
    let hv = DVector::from_iterator(n, stats.mean.iter().map(|m| m * norm));
    Ok(HvpEstimate {
        hv,
        direction: v.clone(),
        evals_used: ev.evals,
        std_error: Some(DVector::from_vec(se)),
    })
}

/// Composite gradient `Jᵀ g` for `f(g(x))` with an analytic inner Jacobian
/// `J` (`n_out × n_in`) and a sampled outer gradient.
pub fn greybox_gradient(inner_jacobian: &DMatrix<f64>, outer: &GradientEstimate) -> Result<GradientEstimate> {
    if inner_jacobian.nrows() != outer.g.len() {
        return Err(Error::ShapeMismatch(format!(
            "jacobian has {} rows, outer gradient has {} entries",
            inner_jacobian.nrows(),
            outer.g.len()
        )));
    }
    Ok(GradientEstimate {
        g: inner_jacobian.transpose() * &outer.g,
        evals_used: outer.evals_used,
        std_error: None,
        mean_value: outer.mean_value,
    })
}

/// Gauss-Newton style composite Hessian `Jᵀ H J`.
pub fn greybox_hessian(inner_jacobian: &DMatrix<f64>, outer: &HessianEstimate) -> Result<HessianEstimate> {
    let m = outer.h.nrows();
    if outer.h.ncols() != m || inner_jacobian.nrows() != m {
        return Err(Error::ShapeMismatch(format!(
            "jacobian is {}x{}, outer hessian is {}x{}",
            inner_jacobian.nrows(),
            inner_jacobian.ncols(),
            outer.h.nrows(),
            outer.h.ncols()
        )));
    }
    let mut h = inner_jacobian.transpose() * &outer.h * inner_jacobian;
    // exact symmetry
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
    Ok(HessianEstimate { h, evals_used: outer.evals_used, std_error: None, mean_value: outer.mean_value })
}
