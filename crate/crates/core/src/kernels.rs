//! Gaussian smoothing kernel, its first and second derivative kernels, and the
//! positivized normalized densities used to importance-sample them.
//!
//! All one-dimensional densities are written for a general bandwidth `sigma`
//! but are the `sigma = 1` shapes rescaled by `sigma`. Normalization constants
//! are closed form.

use std::f64::consts::E;
use std::fmt;

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

/// Bandwidth and dimension of an isotropic Gaussian smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    sigma: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        Ok(Self { sigma, dim })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same dimension, new bandwidth.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(sigma, self.dim)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: len });
        }
        Ok(())
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.dim {
            return Err(Error::IndexOutOfRange { index, dim: self.dim });
        }
        Ok(())
    }
}

/// One element of a differential kernel.
///
/// Off-diagonal Hessian elements are stored with `i < j`; use
/// [`KernelElement::hessian`] to build one from an arbitrary index pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelElement {
    PlainGaussian,
    GradientDim(usize),
    HessianDiag(usize),
    HessianOffDiag(usize, usize),
}

impl KernelElement {
    /// Hessian element `(i, j)`, canonicalized under symmetry.
    pub fn hessian(i: usize, j: usize) -> Self {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => KernelElement::HessianDiag(i),
            std::cmp::Ordering::Less => KernelElement::HessianOffDiag(i, j),
            std::cmp::Ordering::Greater => KernelElement::HessianOffDiag(j, i),
        }
    }

    /// Canonical form: off-diagonal indices sorted.
    pub fn canonical(self) -> Self {
        match self {
            KernelElement::HessianOffDiag(i, j) => KernelElement::hessian(i, j),
            other => other,
        }
    }

    pub fn gradient_elements(dim: usize) -> Vec<Self> {
        (0..dim).map(KernelElement::GradientDim).collect()
    }

    /// Upper triangle plus diagonal, row-major.
    pub fn hessian_elements(dim: usize) -> Vec<Self> {
        let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                out.push(KernelElement::hessian(i, j));
            }
        }
        out
    }

    pub fn is_hessian(&self) -> bool {
        matches!(self, KernelElement::HessianDiag(_) | KernelElement::HessianOffDiag(..))
    }

    pub(crate) fn validate(&self, spec: &KernelSpec) -> Result<()> {
        match *self {
            KernelElement::PlainGaussian => Ok(()),
            KernelElement::GradientDim(i) | KernelElement::HessianDiag(i) => spec.check_index(i),
            KernelElement::HessianOffDiag(i, j) => {
                spec.check_index(i)?;
                spec.check_index(j)?;
                if i == j {
                    return Err(Error::ElementKind(format!("{self} has equal indices")));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for KernelElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelElement::PlainGaussian => write!(f, "N"),
            KernelElement::GradientDim(i) => write!(f, "G[{i}]"),
            KernelElement::HessianDiag(i) => write!(f, "H[{i},{i}]"),
            KernelElement::HessianOffDiag(i, j) => write!(f, "H[{i},{j}]"),
        }
    }
}

/// One-dimensional Gaussian density with standard deviation `sigma`.
#[inline]
pub fn gaussian_pdf_1d(u: f64, sigma: f64) -> f64 {
    (-0.5 * (u / sigma).powi(2)).exp() / (sigma * SQRT_2PI)
}

/// Isotropic n-dimensional Gaussian density at offset `tau`.
pub fn gaussian_pdf(tau: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.check_len(tau.len())?;
    Ok(tau.iter().map(|&t| gaussian_pdf_1d(t, spec.sigma)).product())
}

/// `∂κ/∂τ_i = -τ_i / σ² · N(τ; σ)`.
pub fn gradient_kernel(tau: &[f64], i: usize, spec: &KernelSpec) -> Result<f64> {
    spec.check_index(i)?;
    let n = gaussian_pdf(tau, spec)?;
    Ok(-tau[i] / spec.sigma.powi(2) * n)
}

/// Second derivative kernel for a Hessian element.
pub fn hessian_kernel(tau: &[f64], elem: KernelElement, spec: &KernelSpec) -> Result<f64> {
    if !elem.is_hessian() {
        return Err(Error::ElementKind(elem.to_string()));
    }
    elem.validate(spec)?;
    let n = gaussian_pdf(tau, spec)?;
    Ok(kernel_ratio(tau, elem, spec.sigma) * n)
}

/// Value of any kernel element at `tau`.
pub fn kernel_value(tau: &[f64], elem: KernelElement, spec: &KernelSpec) -> Result<f64> {
    elem.validate(spec)?;
    let n = gaussian_pdf(tau, spec)?;
    Ok(kernel_ratio(tau, elem, spec.sigma) * n)
}

/// Kernel element divided by the plain Gaussian `N(τ; σ)`.
///
/// The estimators work in this ratio space so that the shared Gaussian factor
/// cancels between kernel and sampling density in high dimension.
#[inline]
pub(crate) fn kernel_ratio(tau: &[f64], elem: KernelElement, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    match elem {
        KernelElement::PlainGaussian => 1.0,
        KernelElement::GradientDim(i) => -tau[i] / s2,
        KernelElement::HessianDiag(i) => -1.0 / s2 + tau[i] * tau[i] / (s2 * s2),
        KernelElement::HessianOffDiag(i, j) => tau[i] * tau[j] / (s2 * s2),
    }
}

/// Positivized, normalized 1D gradient kernel: `|u| / (2σ²) · exp(-u² / 2σ²)`.
#[inline]
pub fn gradient_pdf(u: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    u.abs() / (2.0 * sigma * sigma) * (-0.5 * (u / sigma).powi(2)).exp()
}

/// `gradient_pdf(u) / N(u)`.
#[inline]
pub(crate) fn gradient_density_ratio(u: f64, sigma: f64) -> f64 {
    u.abs() * SQRT_2PI / (2.0 * sigma)
}

/// CDF of [`gradient_pdf`].
pub fn gradient_cdf(u: f64, sigma: f64) -> f64 {
    let tail = 0.5 * (-0.5 * (u / sigma).powi(2)).exp();
    if u <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Exact inverse of [`gradient_cdf`].
pub fn gradient_inverse_cdf(xi: f64, sigma: f64) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::invalid("xi", format!("must lie in (0, 1), got {xi}")));
    }
    Ok(sigma * unit_gradient_inverse_cdf(xi))
}

#[inline]
pub(crate) fn unit_gradient_inverse_cdf(xi: f64) -> f64 {
    if xi <= 0.5 {
        -(-2.0 * (2.0 * xi).ln()).sqrt()
    } else {
        (-2.0 * (2.0 * (1.0 - xi)).ln()).sqrt()
    }
}

/// Normalization of the positivized Hessian-diagonal kernel,
/// `β = σ² √(2π) e^{1/2} / 4`.
pub fn hessian_diag_beta(sigma: f64) -> f64 {
    sigma * sigma * SQRT_2PI * E.sqrt() / 4.0
}

/// Positivized, normalized 1D Hessian-diagonal kernel.
#[inline]
pub fn hessian_diag_pdf(u: f64, sigma: f64) -> f64 {
    hessian_diag_density_ratio(u, sigma) * gaussian_pdf_1d(u, sigma)
}

/// `hessian_diag_pdf(u) / N(u)`.
#[inline]
pub(crate) fn hessian_diag_density_ratio(u: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    hessian_diag_beta(sigma) * (-1.0 / s2 + u * u / (s2 * s2)).abs()
}

/// Piecewise closed-form CDF of [`hessian_diag_pdf`].
pub fn hessian_diag_cdf(u: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let z = u / sigma;
    // `z/4 · exp(1/2 - z²/2)` is ±1/4 at z = ±1.
    let e = z / 4.0 * (0.5 - 0.5 * z * z).exp();
    if z < -1.0 {
        -e
    } else if z <= 1.0 {
        0.5 + e
    } else {
        1.0 - e
    }
}

/// Derivative kernel with the Gaussian only along the differentiated axis.
pub fn axis_blur_gradient_kernel(u: f64, sigma: f64) -> f64 {
    -u / (sigma * sigma) * gaussian_pdf_1d(u, sigma)
}
