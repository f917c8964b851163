//! Offset samplers for the positivized derivative kernels.
//!
//! Every sampler draws an offset vector `τ` whose differentiated coordinates
//! follow the 1D positivized kernel density and whose remaining coordinates
//! follow the plain Gaussian. Densities are tracked as the ratio `p(τ) / N(τ)`
//! so that the common Gaussian factor cancels in estimator weights.

use std::sync::OnceLock;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{
    gradient_density_ratio, hessian_diag_cdf, hessian_diag_density_ratio,
    unit_gradient_inverse_cdf, KernelElement, KernelSpec,
};

/// Half-width, in units of sigma, of the tabulated Hessian-diagonal CDF and of
/// the uniform comparison sampler.
pub const TABLE_HALF_RANGE: f64 = 10.0;
pub const DEFAULT_TABLE_RESOLUTION: usize = 8192;
pub const MIN_TABLE_RESOLUTION: usize = 1024;

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent,
/// reproducible streams per id.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream with the same seed and a different id.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_open()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// Tabulated inverse of the Hessian-diagonal CDF in unit-sigma coordinates.
///
/// The CDF is sampled on a uniform grid over `[-10, 10]`. A bucket index over
/// `ξ` stores the first grid cell of each bucket so a lookup only scans a few
/// cells before interpolating linearly.
#[derive(Debug, Clone)]
pub struct TabulatedInverseCdf {
    grid: Vec<f64>,
    cdf_values: Vec<f64>,
    buckets: Vec<u32>,
}

impl TabulatedInverseCdf {
    pub fn build_hessian_diag_table(resolution: usize) -> Result<Self> {
        if resolution < MIN_TABLE_RESOLUTION {
            return Err(Error::invalid(
                "resolution",
                format!("must be >= {MIN_TABLE_RESOLUTION}, got {resolution}"),
            ));
        }
        let step = 2.0 * TABLE_HALF_RANGE / (resolution - 1) as f64;
        let grid: Vec<f64> = (0..resolution)
            .map(|k| -TABLE_HALF_RANGE + step * k as f64)
            .collect();
        let mut cdf_values: Vec<f64> = grid.iter().map(|&u| hessian_diag_cdf(u, 1.0)).collect();
        // enforce monotonicity against rounding at the branch joins
        for k in 1..resolution {
            if cdf_values[k] < cdf_values[k - 1] {
                cdf_values[k] = cdf_values[k - 1];
            }
        }
        let nb = resolution;
        let buckets = (0..=nb)
            .map(|b| {
                let target = b as f64 / nb as f64;
                let idx = cdf_values.partition_point(|&c| c <= target);
                idx.saturating_sub(1) as u32
            })
            .collect();
        Ok(Self { grid, cdf_values, buckets })
    }

    /// Process-wide table at the default resolution.
    pub fn shared() -> &'static TabulatedInverseCdf {
        static TABLE: OnceLock<TabulatedInverseCdf> = OnceLock::new();
        TABLE.get_or_init(|| {
            Self::build_hessian_diag_table(DEFAULT_TABLE_RESOLUTION)
                .expect("default resolution is valid")
        })
    }

    pub fn resolution(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf_values
    }

    /// Offset `u` (sigma = 1) with `cdf(u) ≈ xi`.
    pub fn lookup(&self, xi: f64) -> f64 {
        let last = self.grid.len() - 1;
        if xi <= self.cdf_values[0] {
            return self.grid[0];
        }
        if xi >= self.cdf_values[last] {
            return self.grid[last];
        }
        let nb = self.buckets.len() - 1;
        let b = ((xi * nb as f64) as usize).min(nb - 1);
        let lo = self.buckets[b] as usize;
        let hi = (self.buckets[b + 1] as usize + 1).min(last);
        // last k in [lo, hi] with cdf[k] <= xi
        let k = lo + self.cdf_values[lo..=hi].partition_point(|&c| c <= xi) - 1;
        let k = k.min(last - 1);
        let (c0, c1) = (self.cdf_values[k], self.cdf_values[k + 1]);
        if c1 <= c0 {
            return self.grid[k];
        }
        let t = (xi - c0) / (c1 - c0);
        self.grid[k] + t * (self.grid[k + 1] - self.grid[k])
    }
}

/// Where an offset sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSource {
    Element(KernelElement),
    Mixture,
    Uniform,
}

/// An offset vector together with the density it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSample {
    pub tau: Vec<f64>,
    /// Natural log of the sampling density at `tau`.
    pub log_pdf: f64,
    pub source: SampleSource,
    /// `ln(p(τ) / N(τ; σ))`.
    pub(crate) log_ratio: f64,
}

impl OffsetSample {
    pub fn pdf_value(&self) -> f64 {
        self.log_pdf.exp()
    }

    pub fn dim(&self) -> usize {
        self.tau.len()
    }
}

/// `ln N(τ; σ)` for the isotropic Gaussian.
pub(crate) fn log_gaussian(tau: &[f64], sigma: f64) -> f64 {
    let ss: f64 = tau.iter().map(|t| t * t).sum();
    -0.5 * ss / (sigma * sigma) - tau.len() as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Density ratio `p_elem(τ) / N(τ)` of an element's sampling distribution.
#[inline]
pub(crate) fn element_density_ratio(elem: KernelElement, tau: &[f64], sigma: f64) -> f64 {
    match elem {
        KernelElement::PlainGaussian => 1.0,
        KernelElement::GradientDim(i) => gradient_density_ratio(tau[i], sigma),
        KernelElement::HessianDiag(i) => hessian_diag_density_ratio(tau[i], sigma),
        KernelElement::HessianOffDiag(i, j) => {
            gradient_density_ratio(tau[i], sigma) * gradient_density_ratio(tau[j], sigma)
        }
    }
}

/// Sampling density of an element's distribution at `tau`.
pub fn element_pdf(elem: KernelElement, tau: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.check_len(tau.len())?;
    elem.validate(spec)?;
    let r = element_density_ratio(elem, tau, spec.sigma());
    Ok(r * log_gaussian(tau, spec.sigma()).exp())
}

/// Mixture density `(1/K) Σ_k p_k(τ)` over `elements`.
pub fn mixture_pdf(elements: &[KernelElement], tau: &[f64], spec: &KernelSpec) -> Result<f64> {
    if elements.is_empty() {
        return Err(Error::EmptyElements);
    }
    spec.check_len(tau.len())?;
    for e in elements {
        e.validate(spec)?;
    }
    Ok(mixture_ratio(elements, tau, spec.sigma()) * log_gaussian(tau, spec.sigma()).exp())
}

pub(crate) fn mixture_ratio(elements: &[KernelElement], tau: &[f64], sigma: f64) -> f64 {
    let sum: f64 = elements.iter().map(|&e| element_density_ratio(e, tau, sigma)).sum();
    sum / elements.len() as f64
}

#[inline]
fn draw_gradient_coord(sigma: f64, rng: &mut RngStream) -> f64 {
    loop {
        let u = sigma * unit_gradient_inverse_cdf(rng.uniform_open());
        if u != 0.0 {
            return u;
        }
    }
}

#[inline]
fn draw_hessian_diag_coord(sigma: f64, table: &TabulatedInverseCdf, rng: &mut RngStream) -> f64 {
    loop {
        let u = sigma * table.lookup(rng.uniform_open());
        if hessian_diag_density_ratio(u, sigma) > 0.0 {
            return u;
        }
    }
}

/// Fills `tau` with a draw from `elem`'s sampling distribution.
pub(crate) fn draw_element_into(
    elem: KernelElement,
    sigma: f64,
    table: &TabulatedInverseCdf,
    rng: &mut RngStream,
    tau: &mut [f64],
) {
    for t in tau.iter_mut() {
        *t = sigma * rng.standard_normal();
    }
    match elem {
        KernelElement::PlainGaussian => {}
        KernelElement::GradientDim(i) => tau[i] = draw_gradient_coord(sigma, rng),
        KernelElement::HessianDiag(i) => tau[i] = draw_hessian_diag_coord(sigma, table, rng),
        KernelElement::HessianOffDiag(i, j) => {
            tau[i] = draw_gradient_coord(sigma, rng);
            tau[j] = draw_gradient_coord(sigma, rng);
        }
    }
}

pub(crate) fn draw_uniform_into(sigma: f64, rng: &mut RngStream, tau: &mut [f64]) {
    let h = TABLE_HALF_RANGE * sigma;
    for t in tau.iter_mut() {
        *t = rng.uniform(-h, h);
    }
}

/// `ln((20σ)^-n)`: log density of the uniform comparison sampler.
pub(crate) fn log_uniform_density(sigma: f64, dim: usize) -> f64 {
    -(dim as f64) * (2.0 * TABLE_HALF_RANGE * sigma).ln()
}

fn finish(tau: Vec<f64>, log_ratio: f64, sigma: f64, source: SampleSource) -> OffsetSample {
    let log_pdf = log_gaussian(&tau, sigma) + log_ratio;
    OffsetSample { tau, log_pdf, source, log_ratio }
}

/// Gradient-element sample: coordinate `i` from the positivized gradient
/// density, all others Gaussian.
pub fn sample_gradient_offset(i: usize, spec: &KernelSpec, rng: &mut RngStream) -> Result<OffsetSample> {
    spec.check_index(i)?;
    let elem = KernelElement::GradientDim(i);
    let mut tau = vec![0.0; spec.dim()];
    draw_element_into(elem, spec.sigma(), TabulatedInverseCdf::shared(), rng, &mut tau);
    let r = element_density_ratio(elem, &tau, spec.sigma());
    Ok(finish(tau, r.ln(), spec.sigma(), SampleSource::Element(elem)))
}

/// Hessian-element sample. Diagonal coordinates use the tabulated inverse,
/// off-diagonal pairs use two independent gradient draws.
pub fn sample_hessian_offset(
    elem: KernelElement,
    spec: &KernelSpec,
    table: &TabulatedInverseCdf,
    rng: &mut RngStream,
) -> Result<OffsetSample> {
    if !elem.is_hessian() {
        return Err(Error::ElementKind(elem.to_string()));
    }
    sample_element_offset(elem, spec, table, rng)
}

/// Sample from any single element's distribution.
pub fn sample_element_offset(
    elem: KernelElement,
    spec: &KernelSpec,
    table: &TabulatedInverseCdf,
    rng: &mut RngStream,
) -> Result<OffsetSample> {
    let elem = elem.canonical();
    elem.validate(spec)?;
    let mut tau = vec![0.0; spec.dim()];
    draw_element_into(elem, spec.sigma(), table, rng, &mut tau);
    let r = element_density_ratio(elem, &tau, spec.sigma());
    Ok(finish(tau, r.ln(), spec.sigma(), SampleSource::Element(elem)))
}

/// Uniform-mixture sample over `elements`.
///
/// One element is picked uniformly, `τ` is drawn from it, and the returned
/// density is the full mixture density at `τ`. A single-element list returns
/// that element's sample unchanged.
pub fn sample_aggregate_offset(
    elements: &[KernelElement],
    spec: &KernelSpec,
    table: &TabulatedInverseCdf,
    rng: &mut RngStream,
) -> Result<OffsetSample> {
    match elements {
        [] => Err(Error::EmptyElements),
        [single] => sample_element_offset(*single, spec, table, rng),
        _ => {
            for e in elements {
                e.validate(spec)?;
            }
            let k = rng.index(elements.len());
            let mut tau = vec![0.0; spec.dim()];
            draw_element_into(elements[k].canonical(), spec.sigma(), table, rng, &mut tau);
            let r = mixture_ratio(elements, &tau, spec.sigma());
            Ok(finish(tau, r.ln(), spec.sigma(), SampleSource::Mixture))
        }
    }
}

/// Uniform sample on `[-10σ, 10σ]^n`.
pub fn sample_uniform_offset(spec: &KernelSpec, rng: &mut RngStream) -> OffsetSample {
    let mut tau = vec![0.0; spec.dim()];
    draw_uniform_into(spec.sigma(), rng, &mut tau);
    let log_pdf = log_uniform_density(spec.sigma(), spec.dim());
    let log_ratio = log_pdf - log_gaussian(&tau, spec.sigma());
    OffsetSample { tau, log_pdf, source: SampleSource::Uniform, log_ratio }
}

/// `(τ, -τ)`. All sampling densities here are even, so both halves share
/// the same density.
pub fn antithetic_pair(sample: OffsetSample) -> (OffsetSample, OffsetSample) {
    let mirrored = OffsetSample {
        tau: sample.tau.iter().map(|t| -t).collect(),
        log_pdf: sample.log_pdf,
        source: sample.source,
        log_ratio: sample.log_ratio,
    };
    (sample, mirrored)
}
