//! Orthographic view of a Phong-shaded unit sphere lit by one point light.
//!
//! Parameters are diffuse RGB, specular RGB and the shininess exponent. The
//! geometry is fixed, so per-pixel `n·l` and `r·v` are precomputed and the
//! image, its parameter gradient and Hessian are closed form.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::tasks::image::Image;

pub const PHONG_DIM: usize = 7;
/// Smallest shininess used for shading; lower values are raised to it.
pub const MIN_SHININESS: f64 = 1e-3;
const LIGHT: [f64; 3] = [2.0, 2.0, 3.0];
const VIEW_HALF_WIDTH: f64 = 1.1;
const TRUE_PARAMS: [f64; PHONG_DIM] = [0.7, 0.4, 0.2, 0.3, 0.3, 0.3, 20.0];

#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelTerms {
    index: usize,
    diffuse: f64,
    /// `r·v`, or zero when the highlight is absent.
    specular_base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhongScene {
    size: usize,
    pixels: Vec<PixelTerms>,
    reference: Vec<f64>,
}

impl PhongScene {
    pub fn new(size: usize) -> Self {
        let mut pixels = Vec::new();
        let light = Vector3::from(LIGHT);
        let view = Vector3::new(0.0, 0.0, 1.0);
        let step = 2.0 * VIEW_HALF_WIDTH / size as f64;
        for py in 0..size {
            for px in 0..size {
                let x = -VIEW_HALF_WIDTH + (px as f64 + 0.5) * step;
                let y = VIEW_HALF_WIDTH - (py as f64 + 0.5) * step;
                let r2 = x * x + y * y;
                if r2 >= 1.0 {
                    continue;
                }
                let n = Vector3::new(x, y, (1.0 - r2).sqrt());
                let l = (light - n).normalize();
                let nl = n.dot(&l);
                if nl <= 0.0 {
                    pixels.push(PixelTerms { index: py * size + px, diffuse: 0.0, specular_base: 0.0 });
                    continue;
                }
                let r = 2.0 * nl * n - l;
                let rv = r.dot(&view).max(0.0);
                pixels.push(PixelTerms { index: py * size + px, diffuse: nl, specular_base: rv });
            }
        }
        let mut scene = Self { size, pixels, reference: Vec::new() };
        scene.reference = scene.shade(&TRUE_PARAMS);
        scene
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn theta_true() -> [f64; PHONG_DIM] {
        TRUE_PARAMS
    }

    /// RGB values per image sample, row-major with channels interleaved.
    fn shade(&self, theta: &[f64]) -> Vec<f64> {
        let s = theta[6].max(MIN_SHININESS);
        let mut out = vec![0.0; self.size * self.size * 3];
        for p in &self.pixels {
            let spec = if p.specular_base > 0.0 { p.specular_base.powf(s) } else { 0.0 };
            for c in 0..3 {
                out[3 * p.index + c] = theta[c] * p.diffuse + theta[3 + c] * spec;
            }
        }
        out
    }

    fn sample_count(&self) -> f64 {
        (self.size * self.size * 3) as f64
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let img = self.shade(theta);
        img.iter().zip(&self.reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.sample_count()
    }

    pub fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        self.derivatives(theta).0
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.derivatives(theta).1
    }

    /// Gradient and Hessian of the loss. Only lit pixels depend on the
    /// parameters; background pixels match the reference exactly.
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let clamped = theta[6] < MIN_SHININESS;
        let s = theta[6].max(MIN_SHININESS);
        let scale = 2.0 / self.sample_count();
        let mut g = DVector::zeros(PHONG_DIM);
        let mut h = DMatrix::zeros(PHONG_DIM, PHONG_DIM);
        for p in &self.pixels {
            let (spec, log_base) = if p.specular_base > 0.0 {
                (p.specular_base.powf(s), p.specular_base.ln())
            } else {
                (0.0, 0.0)
            };
            let ds = if clamped { 0.0 } else { 1.0 };
            for c in 0..3 {
                let value = theta[c] * p.diffuse + theta[3 + c] * spec;
                let err = value - self.reference[3 * p.index + c];
                // first derivatives of this sample
                let mut dv = [0.0; PHONG_DIM];
                dv[c] = p.diffuse;
                dv[3 + c] = spec;
                dv[6] = ds * theta[3 + c] * spec * log_base;
                for i in 0..PHONG_DIM {
                    g[i] += scale * err * dv[i];
                    for j in 0..=i {
                        let w = scale * dv[i] * dv[j];
                        h[(i, j)] += w;
                        if i != j {
                            h[(j, i)] += w;
                        }
                    }
                }
                // second derivatives of this sample
                let d_ks_s = ds * spec * log_base;
                let d_s_s = ds * theta[3 + c] * spec * log_base * log_base;
                h[(3 + c, 6)] += scale * err * d_ks_s;
                h[(6, 3 + c)] += scale * err * d_ks_s;
                h[(6, 6)] += scale * err * d_s_s;
            }
        }
        (g, h)
    }

    pub fn render(&self, theta: &[f64]) -> Image {
        let mut img = Image::new(self.size, self.size, 3);
        for (d, v) in img.data.iter_mut().zip(self.shade(theta)) {
            *d = v as f32;
        }
        img
    }

    pub fn reference(&self) -> Image {
        self.render(&TRUE_PARAMS)
    }
}
