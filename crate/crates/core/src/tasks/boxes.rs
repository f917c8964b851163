//! Axis-aligned box scenes with plateaued losses.
//!
//! Coordinates are in units of the box side: every box is a unit square and
//! the canvas spans `[-4, 4]²`, so a box covers 1/8 of the canvas width. The
//! loss is the squared difference between the rendered and reference
//! coverage functions, integrated exactly over the plane and expressed in
//! units of box area. It is evaluated from pairwise rectangle overlaps, so it
//! is exactly constant while no box touches a target or another box. The
//! canvas bounds only the pixel renders.

use crate::error::{Error, Result};
use crate::samplers::RngStream;
use crate::tasks::image::Image;

pub const CANVAS_HALF_WIDTH: f64 = 4.0;
pub const MAX_BOXES: usize = 8;
const HALF: f64 = 0.5;
const INSIDE_LIMIT: f64 = CANVAS_HALF_WIDTH - HALF;

const TARGETS: [[f64; 2]; MAX_BOXES] = [
    [-2.2, -2.2],
    [2.2, -2.2],
    [0.0, 0.0],
    [-2.2, 2.2],
    [2.2, 2.2],
    [0.0, -2.6],
    [-2.6, 0.0],
    [2.6, 0.0],
];
const INTENSITY_STEP: f64 = 0.08;
const SINGLE_TARGET: [f64; 2] = [0.3, -0.2];

/// Plateau starts sit between these Chebyshev distances from their own target.
pub const PLATEAU_MIN_OFFSET: f64 = 1.2;
pub const PLATEAU_MAX_OFFSET: f64 = 2.5;
const CLEARANCE: f64 = 1.05;
/// A start is closer to its own target than to any other by this much.
const OWN_TARGET_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxScene {
    width: usize,
    height: usize,
    targets: Vec<[f64; 2]>,
    intensities: Vec<f64>,
    reference_term: f64,
}

fn inside(c: f64) -> bool {
    c.abs() <= INSIDE_LIMIT
}

/// Overlap length of two unit intervals centered at `a` and `b`.
fn overlap_1d(a: f64, b: f64) -> f64 {
    (1.0 - (a - b).abs()).max(0.0)
}

fn overlap(a: [f64; 2], b: [f64; 2]) -> f64 {
    let ox = overlap_1d(a[0], b[0]);
    if ox == 0.0 {
        return 0.0;
    }
    ox * overlap_1d(a[1], b[1])
}

fn chebyshev(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

impl BoxScene {
    pub fn new(num_boxes: usize, width: usize, height: usize) -> Result<Self> {
        if !(1..=MAX_BOXES).contains(&num_boxes) {
            return Err(Error::invalid("num_boxes", format!("must be in 1..={MAX_BOXES}, got {num_boxes}")));
        }
        if width < 32 || height < 32 {
            return Err(Error::invalid("resolution", format!("must be at least 32x32, got {width}x{height}")));
        }
        let targets = if num_boxes == 1 { vec![SINGLE_TARGET] } else { TARGETS[..num_boxes].to_vec() };
        // distinct weights 1 - 0.08 j, normalized to sum 1 so the image never exceeds 1
        let raw: Vec<f64> = (0..num_boxes).map(|j| 1.0 - INTENSITY_STEP * j as f64).collect();
        let total: f64 = raw.iter().sum();
        let intensities = raw.iter().map(|w| w / total).collect();
        let mut scene = Self { width, height, targets, intensities, reference_term: 0.0 };
        scene.reference_term = scene.pair_sum(&scene.targets.clone(), &scene.targets.clone());
        Ok(scene)
    }

    pub fn num_boxes(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.targets.len()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn theta_true(&self) -> Vec<f64> {
        self.targets.iter().flatten().copied().collect()
    }

    fn centers(theta: &[f64]) -> Vec<[f64; 2]> {
        theta.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }

    /// `Σ_{k,k'} I_k I_k' |A_k ∩ B_k'|`.
    fn pair_sum(&self, a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
        let mut s = 0.0;
        for (ka, ca) in a.iter().enumerate() {
            for (kb, cb) in b.iter().enumerate() {
                s += self.intensities[ka] * self.intensities[kb] * overlap(*ca, *cb);
            }
        }
        s
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let boxes = Self::centers(theta);
        let own = self.pair_sum(&boxes, &boxes);
        let cross = self.pair_sum(&boxes, &self.targets);
        (own - 2.0 * cross + self.reference_term).max(0.0)
    }

    /// True when no box touches a target or another box.
    pub fn is_plateau(&self, theta: &[f64]) -> bool {
        let boxes = Self::centers(theta);
        boxes.iter().enumerate().all(|(k, b)| {
            self.targets.iter().all(|t| chebyshev(*b, *t) > 1.0)
                && boxes.iter().enumerate().all(|(j, o)| j == k || chebyshev(*b, *o) > 1.0)
        })
    }

    /// Random plateau start: each box between 1.2 and 2.5 box sides
    /// (Chebyshev) from its own target and at least 0.5 closer to it than to
    /// any other target, inside the canvas, and clear of all targets and of
    /// the boxes placed before it.
    pub fn sample_plateau_start(&self, rng: &mut RngStream) -> Vec<f64> {
        'attempt: for _ in 0..1000 {
            let mut placed: Vec<[f64; 2]> = Vec::with_capacity(self.num_boxes());
            for target in &self.targets {
                let mut found = None;
                for _ in 0..1000 {
                    let c = [
                        target[0] + rng.uniform(-PLATEAU_MAX_OFFSET, PLATEAU_MAX_OFFSET),
                        target[1] + rng.uniform(-PLATEAU_MAX_OFFSET, PLATEAU_MAX_OFFSET),
                    ];
                    let ok = chebyshev(c, *target) >= PLATEAU_MIN_OFFSET
                        && inside(c[0])
                        && inside(c[1])
                        && self.targets.iter().all(|t| {
                            t == target
                                || chebyshev(c, *t) >= CLEARANCE.max(chebyshev(c, *target) + OWN_TARGET_MARGIN)
                        })
                        && placed.iter().all(|p| chebyshev(c, *p) >= CLEARANCE);
                    if ok {
                        found = Some(c);
                        break;
                    }
                }
                match found {
                    Some(c) => placed.push(c),
                    None => continue 'attempt,
                }
            }
            return placed.into_iter().flatten().collect();
        }
        unreachable!("built-in target layouts always admit plateau starts")
    }

    /// Fixed list of certified plateau configurations.
    pub fn plateau_points(&self) -> Vec<Vec<f64>> {
        let offsets: [[f64; 2]; 4] = [[1.6, 0.0], [-1.3, 1.4], [0.0, -2.0], [1.5, 1.5]];
        let mut points = Vec::new();
        for o in offsets {
            for sign in [1.0, -1.0] {
                let theta: Vec<f64> = self
                    .targets
                    .iter()
                    .flat_map(|t| [t[0] + sign * o[0], t[1] + sign * o[1]])
                    .collect();
                if self.is_plateau(&theta) {
                    points.push(theta);
                }
            }
        }
        let mut rng = RngStream::new(0x5eed_b0c5, 0);
        while points.len() < 4 {
            points.push(self.sample_plateau_start(&mut rng));
        }
        points
    }

    /// Pixel image with analytic per-pixel coverage, clamped to `[0, 1]`.
    pub fn render(&self, theta: &[f64]) -> Image {
        let mut img = Image::new(self.width, self.height, 1);
        let pw = 2.0 * CANVAS_HALF_WIDTH / self.width as f64;
        let ph = 2.0 * CANVAS_HALF_WIDTH / self.height as f64;
        let mut acc = vec![0.0f64; self.width * self.height];
        for (k, c) in Self::centers(theta).iter().enumerate() {
            let cover = |center: f64, p0: f64, size: f64| {
                let lo = (center - HALF).max(p0);
                let hi = (center + HALF).min(p0 + size);
                ((hi - lo) / size).max(0.0)
            };
            let px_range = pixel_range(c[0], pw, self.width);
            let py_range = pixel_range(c[1], ph, self.height);
            for py in py_range {
                let cy = cover(c[1], -CANVAS_HALF_WIDTH + py as f64 * ph, ph);
                for px in px_range.clone() {
                    let cx = cover(c[0], -CANVAS_HALF_WIDTH + px as f64 * pw, pw);
                    acc[py * self.width + px] += self.intensities[k] * cx * cy;
                }
            }
        }
        for (d, a) in img.data.iter_mut().zip(acc) {
            *d = a.clamp(0.0, 1.0) as f32;
        }
        img
    }

    pub fn reference(&self) -> Image {
        self.render(&self.theta_true())
    }
}

fn pixel_range(center: f64, size: f64, count: usize) -> std::ops::Range<usize> {
    let lo = ((center - HALF + CANVAS_HALF_WIDTH) / size).floor();
    let hi = ((center + HALF + CANVAS_HALF_WIDTH) / size).ceil();
    let lo = lo.clamp(0.0, count as f64) as usize;
    let hi = hi.clamp(0.0, count as f64) as usize;
    lo..hi
}
