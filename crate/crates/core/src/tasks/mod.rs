//! Benchmark objectives with known minimizers.

pub mod boxes;
pub mod image;
pub mod phong;
pub mod texture;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::Objective;
use crate::samplers::RngStream;

pub use boxes::BoxScene;
pub use image::Image;
pub use phong::PhongScene;
pub use texture::TextureScene;

/// Default texture side length.
pub const DEFAULT_TEXTURE_SIDE: usize = 16;
/// Default box canvas resolution.
pub const DEFAULT_BOX_RESOLUTION: (usize, usize) = (64, 64);
pub const DEFAULT_PHONG_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// `5x₀² + 5x₁² + 7.5x₀x₁`.
    Quad,
    /// `−N(θ; σ₁)` on the plane.
    NegatedGaussian { sigma1: f64 },
    Boxes(BoxScene),
    Texture(TextureScene),
    Phong(PhongScene),
}

/// An objective together with its minimizer, start distribution and any
/// closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    name: String,
    kind: TaskKind,
    theta_true: DVector<f64>,
}

const QUAD_A: f64 = 5.0;
const QUAD_B: f64 = 5.0;
const QUAD_C: f64 = 7.5;

pub fn quad_task() -> Task {
    Task { name: "quad".into(), kind: TaskKind::Quad, theta_true: DVector::zeros(2) }
}

pub fn negated_gaussian_task(sigma1: f64) -> Result<Task> {
    if !(sigma1.is_finite() && sigma1 > 0.0) {
        return Err(Error::invalid("sigma1", format!("must be > 0, got {sigma1}")));
    }
    Ok(Task {
        name: "neg_gauss".into(),
        kind: TaskKind::NegatedGaussian { sigma1 },
        theta_true: DVector::zeros(2),
    })
}

pub fn box_task(num_boxes: usize, resolution: (usize, usize)) -> Result<Task> {
    let scene = BoxScene::new(num_boxes, resolution.0, resolution.1)?;
    let theta_true = DVector::from_vec(scene.theta_true());
    Ok(Task { name: format!("box{}", 2 * num_boxes), kind: TaskKind::Boxes(scene), theta_true })
}

pub fn texture_task(side: usize) -> Result<Task> {
    let scene = TextureScene::new(side)?;
    let theta_true = DVector::from_column_slice(scene.reference_texels());
    let name = if side == DEFAULT_TEXTURE_SIDE { "texture".to_string() } else { format!("texture{side}") };
    Ok(Task { name, kind: TaskKind::Texture(scene), theta_true })
}

pub fn phong_sphere_task() -> Task {
    Task {
        name: "phong".into(),
        kind: TaskKind::Phong(PhongScene::new(DEFAULT_PHONG_SIZE)),
        theta_true: DVector::from_column_slice(&PhongScene::theta_true()),
    }
}

/// Names accepted by [`Task::by_name`].
pub const TASK_NAMES: [&str; 8] =
    ["quad", "neg_gauss", "box2", "box10", "texture", "texture8", "texture32", "phong"];

/// `N(θ; s)` for the isotropic 2D Gaussian.
fn gauss2(theta: &[f64], s: f64) -> f64 {
    let r2 = theta[0] * theta[0] + theta[1] * theta[1];
    (-0.5 * r2 / (s * s)).exp() / (2.0 * PI * s * s)
}

/// Gradient of `−N(θ; s)`.
fn neg_gauss_gradient(theta: &[f64], s: f64) -> DVector<f64> {
    let n = gauss2(theta, s);
    DVector::from_vec(vec![theta[0] / (s * s) * n, theta[1] / (s * s) * n])
}

/// Hessian of `−N(θ; s)`: `N (I/s² − θθᵀ/s⁴)`.
fn neg_gauss_hessian(theta: &[f64], s: f64) -> DMatrix<f64> {
    let n = gauss2(theta, s);
    let s2 = s * s;
    let s4 = s2 * s2;
    DMatrix::from_fn(2, 2, |i, j| {
        let delta = if i == j { 1.0 / s2 } else { 0.0 };
        n * (delta - theta[i] * theta[j] / s4)
    })
}

impl Task {
    pub fn by_name(name: &str) -> Result<Task> {
        match name {
            "quad" => Ok(quad_task()),
            "neg_gauss" => negated_gaussian_task(1.0),
            "box2" => box_task(1, DEFAULT_BOX_RESOLUTION),
            "box10" => box_task(5, DEFAULT_BOX_RESOLUTION),
            "texture" => texture_task(DEFAULT_TEXTURE_SIDE),
            "texture8" => texture_task(8),
            "texture32" => texture_task(32),
            "phong" => Ok(phong_sphere_task()),
            other => Err(Error::Config(format!(
                "unknown task `{other}`; expected one of {}",
                TASK_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &TaskKind {
        &self.kind
    }

    pub fn theta_true(&self) -> &DVector<f64> {
        &self.theta_true
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            TaskKind::Quad => {
                let (x, y) = (theta[0], theta[1]);
                QUAD_A * x * x + QUAD_B * y * y + QUAD_C * x * y
            }
            TaskKind::NegatedGaussian { sigma1 } => -gauss2(theta, *sigma1),
            TaskKind::Boxes(s) => s.loss(theta),
            TaskKind::Texture(s) => s.loss(theta),
            TaskKind::Phong(s) => s.loss(theta),
        }
    }

    /// Euclidean distance to the minimizer.
    pub fn param_error(&self, theta: &DVector<f64>) -> f64 {
        (theta - &self.theta_true).norm()
    }

    /// Loss above its value at the minimizer, so error reductions are
    /// meaningful for objectives whose minimum is not zero.
    pub fn loss_gap(&self, theta: &[f64]) -> f64 {
        self.loss(theta) - self.loss(self.theta_true.as_slice())
    }

    /// `(loss_gap, param_error)` for trace records.
    pub fn monitor(&self, theta: &DVector<f64>) -> (f64, f64) {
        (self.loss_gap(theta.as_slice()), self.param_error(theta))
    }

    /// Random start drawn from the task's start distribution.
    pub fn sample_init(&self, rng: &mut RngStream) -> DVector<f64> {
        match &self.kind {
            TaskKind::Quad | TaskKind::NegatedGaussian { .. } => {
                DVector::from_fn(2, |_, _| rng.uniform(-3.0, 3.0))
            }
            TaskKind::Boxes(s) => DVector::from_vec(s.sample_plateau_start(rng)),
            TaskKind::Texture(s) => DVector::from_fn(s.dim(), |_, _| rng.uniform_open()),
            TaskKind::Phong(_) => DVector::from_fn(phong::PHONG_DIM, |i, _| {
                if i < 6 {
                    rng.uniform(0.1, 0.9)
                } else {
                    rng.uniform(5.0, 40.0)
                }
            }),
        }
    }

    /// Closed-form gradient of the unsmoothed objective.
    pub fn analytic_gradient(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        let t = theta.as_slice();
        match &self.kind {
            TaskKind::Quad => Some(DVector::from_vec(vec![
                2.0 * QUAD_A * t[0] + QUAD_C * t[1],
                2.0 * QUAD_B * t[1] + QUAD_C * t[0],
            ])),
            TaskKind::NegatedGaussian { sigma1 } => Some(neg_gauss_gradient(t, *sigma1)),
            TaskKind::Boxes(_) => None,
            TaskKind::Texture(s) => Some(s.gradient(t)),
            TaskKind::Phong(s) => Some(s.gradient(t)),
        }
    }

    pub fn analytic_hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let t = theta.as_slice();
        match &self.kind {
            TaskKind::Quad => Some(DMatrix::from_row_slice(
                2,
                2,
                &[2.0 * QUAD_A, QUAD_C, QUAD_C, 2.0 * QUAD_B],
            )),
            TaskKind::NegatedGaussian { sigma1 } => Some(neg_gauss_hessian(t, *sigma1)),
            TaskKind::Boxes(_) => None,
            TaskKind::Texture(s) => Some(s.hessian(t)),
            TaskKind::Phong(s) => Some(s.hessian(t)),
        }
    }

    /// Closed-form gradient of the objective smoothed at bandwidth `sigma`.
    pub fn smoothed_gradient(&self, theta: &DVector<f64>, sigma: f64) -> Option<DVector<f64>> {
        match &self.kind {
            TaskKind::Quad => self.analytic_gradient(theta),
            TaskKind::NegatedGaussian { sigma1 } => {
                Some(neg_gauss_gradient(theta.as_slice(), sigma1.hypot(sigma)))
            }
            _ => None,
        }
    }

    pub fn smoothed_hessian(&self, theta: &DVector<f64>, sigma: f64) -> Option<DMatrix<f64>> {
        match &self.kind {
            TaskKind::Quad => self.analytic_hessian(theta),
            TaskKind::NegatedGaussian { sigma1 } => {
                Some(neg_gauss_hessian(theta.as_slice(), sigma1.hypot(sigma)))
            }
            _ => None,
        }
    }

    /// Rendered image for raster tasks.
    pub fn render(&self, theta: &DVector<f64>) -> Option<Image> {
        match &self.kind {
            TaskKind::Boxes(s) => Some(s.render(theta.as_slice())),
            TaskKind::Texture(s) => Some(s.render(theta.as_slice())),
            TaskKind::Phong(s) => Some(s.render(theta.as_slice())),
            _ => None,
        }
    }

    pub fn reference_image(&self) -> Option<Image> {
        self.render(&self.theta_true)
    }
}

impl Objective for Task {
    fn dim(&self) -> usize {
        self.theta_true.len()
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.loss(theta)
    }
}
