//! Estimator variance as a function of the evaluation budget.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_gradient, estimate_hessian, estimate_hvp, EstimatorConfig, Objective, SamplingMode};
use crate::kernels::KernelSpec;
use crate::samplers::RngStream;
use crate::tasks::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeOrder {
    Gradient,
    Hessian,
    Hvp,
}

impl DerivativeOrder {
    pub const ALL: [DerivativeOrder; 3] = [DerivativeOrder::Gradient, DerivativeOrder::Hessian, DerivativeOrder::Hvp];

    /// Number of estimated elements for dimension `n`.
    pub fn elements(self, n: usize) -> usize {
        match self {
            DerivativeOrder::Hessian => n * (n + 1) / 2,
            _ => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub order: DerivativeOrder,
    pub mode: SamplingMode,
    /// Requested evaluations per estimate.
    pub budget_evals: u64,
    /// Evaluations each estimate actually used.
    pub evals_per_estimate: u64,
    pub samples: usize,
    /// Sample variance of each element over the repetitions.
    pub element_variances: Vec<f64>,
    pub mean_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSlope {
    pub order: DerivativeOrder,
    pub mode: SamplingMode,
    /// Least-squares slope of log mean variance against log evaluations.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub task: String,
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub repetitions: usize,
    pub rows: Vec<VarianceRow>,
    pub slopes: Vec<VarianceSlope>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSettings {
    pub sigma: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub orders: Vec<DerivativeOrder>,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        Self { sigma: 1.0, repetitions: 100, seed: 0, orders: DerivativeOrder::ALL.to_vec() }
    }
}

/// Antithetic pairs that fit in `budget` evaluations.
pub fn samples_for_budget(order: DerivativeOrder, mode: SamplingMode, n: usize, budget: u64) -> usize {
    let per_pair = match mode {
        SamplingMode::PerElementIS => 2 * order.elements(n) as u64,
        _ => 2,
    };
    (budget / per_pair) as usize
}

/// Flattened estimate: gradient entries, Hessian upper triangle, or `Hv`.
pub fn estimate_elements(
    task: &Task,
    theta: &DVector<f64>,
    order: DerivativeOrder,
    cfg: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, u64)> {
    let n = theta.len();
    match order {
        DerivativeOrder::Gradient => {
            let g = estimate_gradient(task, theta, cfg, rng)?;
            Ok((g.g.iter().copied().collect(), g.evals_used))
        }
        DerivativeOrder::Hessian => {
            let h = estimate_hessian(task, theta, cfg, rng)?;
            let mut out = Vec::with_capacity(order.elements(n));
            for i in 0..n {
                for j in i..n {
                    out.push(h.h[(i, j)]);
                }
            }
            Ok((out, h.evals_used))
        }
        DerivativeOrder::Hvp => {
            let v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
            let e = estimate_hvp(task, theta, &v, cfg, rng)?;
            Ok((e.hv.iter().copied().collect(), e.evals_used))
        }
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-element estimator variance over `settings.repetitions` independent
/// estimates, for every order, mode and budget.
pub fn variance_report(
    task: &Task,
    theta: &DVector<f64>,
    modes: &[SamplingMode],
    budgets: &[u64],
    settings: &VarianceSettings,
) -> Result<VarianceReport> {
    let n = task.dim();
    if theta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: theta.len() });
    }
    if settings.repetitions < 2 {
        return Err(Error::invalid("repetitions", "must be >= 2"));
    }
    let spec = KernelSpec::new(settings.sigma, n)?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut stream = 0u64;
    for &order in &settings.orders {
        for &mode in modes {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &budget in budgets {
                let samples = samples_for_budget(order, mode, n, budget);
                if samples == 0 {
                    return Err(Error::invalid(
                        "budgets",
                        format!("{budget} evaluations cannot fit one {mode:?} {order:?} pair"),
                    ));
                }
                let cfg = EstimatorConfig::new(spec, samples, mode)?;
                let base = stream;
                stream += settings.repetitions as u64;
                let estimates = (0..settings.repetitions)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = RngStream::new(settings.seed, base + r as u64);
                        estimate_elements(task, theta, order, &cfg, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let evals = estimates[0].1;
                let k = estimates[0].0.len();
                let element_variances: Vec<f64> = (0..k)
                    .map(|e| sample_variance(&estimates.iter().map(|(v, _)| v[e]).collect::<Vec<_>>()))
                    .collect();
                let mean_variance = element_variances.iter().sum::<f64>() / k as f64;
                xs.push((evals as f64).ln());
                ys.push(mean_variance.ln());
                rows.push(VarianceRow {
                    order,
                    mode,
                    budget_evals: budget,
                    evals_per_estimate: evals,
                    samples,
                    element_variances,
                    mean_variance,
                });
            }
            let slope = if xs.len() >= 2 { regression_slope(&xs, &ys) } else { f64::NAN };
            slopes.push(VarianceSlope { order, mode, slope });
        }
    }
    Ok(VarianceReport {
        task: task.name().to_string(),
        theta: theta.iter().copied().collect(),
        sigma: settings.sigma,
        repetitions: settings.repetitions,
        rows,
        slopes,
    })
}

impl VarianceReport {
    pub fn row(&self, order: DerivativeOrder, mode: SamplingMode, budget: u64) -> Option<&VarianceRow> {
        self.rows.iter().find(|r| r.order == order && r.mode == mode && r.budget_evals == budget)
    }

    pub fn slope(&self, order: DerivativeOrder, mode: SamplingMode) -> Option<f64> {
        self.slopes.iter().find(|s| s.order == order && s.mode == mode).map(|s| s.slope)
    }

    /// Whitespace-aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "task {} sigma {} repetitions {}\n{:<9} {:<13} {:>8} {:>8} {:>14} {:>10}\n",
            self.task, self.sigma, self.repetitions, "order", "mode", "budget", "evals", "mean_variance", "log10_var"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<9} {:<13} {:>8} {:>8} {:>14.6e} {:>10.4}\n",
                format!("{:?}", r.order),
                format!("{:?}", r.mode),
                r.budget_evals,
                r.evals_per_estimate,
                r.mean_variance,
                r.mean_variance.log10()
            ));
        }
        for s in &self.slopes {
            out.push_str(&format!("slope {:?} {:?} {:.4}\n", s.order, s.mode, s.slope));
        }
        out
    }
}
