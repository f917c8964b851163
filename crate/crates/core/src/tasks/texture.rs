//! Per-texel intensity matching against a seeded random reference.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::samplers::RngStream;
use crate::tasks::image::Image;

const REFERENCE_SEED: u64 = 0x7e47_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct TextureScene {
    side: usize,
    reference: Vec<f64>,
}

impl TextureScene {
    pub fn new(side: usize) -> Result<Self> {
        if side < 4 {
            return Err(Error::invalid("side", format!("must be >= 4, got {side}")));
        }
        let mut rng = RngStream::new(REFERENCE_SEED, side as u64);
        let reference = (0..side * side).map(|_| rng.uniform_open()).collect();
        Ok(Self { side, reference })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn reference_texels(&self) -> &[f64] {
        &self.reference
    }

    /// Mean squared error of the clamped texture.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.reference.len() as f64;
        theta
            .iter()
            .zip(&self.reference)
            .map(|(t, r)| (t.clamp(0.0, 1.0) - r).powi(2))
            .sum::<f64>()
            / n
    }

    /// `2(θ − ref)/n` inside `[0, 1]`, zero where the clamp is active.
    pub fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let n = self.reference.len() as f64;
        DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.reference).map(|(t, r)| {
                if (0.0..=1.0).contains(t) {
                    2.0 * (t - r) / n
                } else {
                    0.0
                }
            }),
        )
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.reference.len() as f64;
        let d = DVector::from_iterator(
            theta.len(),
            theta.iter().map(|t| if (0.0..=1.0).contains(t) { 2.0 / n } else { 0.0 }),
        );
        DMatrix::from_diagonal(&d)
    }

    pub fn render(&self, theta: &[f64]) -> Image {
        let mut img = Image::new(self.side, self.side, 1);
        for (d, t) in img.data.iter_mut().zip(theta) {
            *d = t.clamp(0.0, 1.0) as f32;
        }
        img
    }

    pub fn reference(&self) -> Image {
        self.render(&self.reference)
    }
}
