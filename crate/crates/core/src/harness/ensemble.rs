//! Ensemble execution and threshold statistics.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Counted, EstimatorConfig, Objective};
use crate::harness::config::{Method, RunConfig, DEFAULT_FD_STEP, DEFAULT_LS_ITERS, DEFAULT_LS_TOL};
use crate::kernels::KernelSpec;
use crate::optimizers::{
    gd_adam_run, newton_cg_run, CgSettings, Clock, GradientMethod, RunControl, SampledHessian, SampledHvp,
    SigmaSchedule, TrustRegion,
};
use crate::samplers::RngStream;
use crate::tasks::Task;
use crate::trace::ConvergenceTrace;

/// Error-reduction fractions reported for every ensemble.
pub const THRESHOLDS: [f64; 3] = [0.9, 0.99, 0.999];
/// Virtual seconds charged per objective evaluation in deterministic runs.
pub const VIRTUAL_SECONDS_PER_EVAL: f64 = 1e-3;
/// Resolution of the bandwidth schedule over the budget.
const SCHEDULE_STEPS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    pub fraction: f64,
    /// Runs whose loss fell to `(1 − fraction)` of their initial loss.
    pub reached: usize,
    pub runs: usize,
    /// Median over reaching runs; `None` unless at least half the runs reached.
    pub median_time_s: Option<f64>,
    pub median_evals: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub traces: Vec<ConvergenceTrace>,
    pub thresholds: Vec<ThresholdStat>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

/// Threshold statistics over traces. Aborted runs count as unreached.
pub fn threshold_stats(traces: &[ConvergenceTrace]) -> Vec<ThresholdStat> {
    THRESHOLDS
        .iter()
        .map(|&fraction| {
            let hits: Vec<_> = traces
                .iter()
                .filter(|t| t.aborted.is_none())
                .filter_map(|t| t.first_crossing(fraction))
                .collect();
            let reached = hits.len();
            let enough = 2 * reached >= traces.len() && reached > 0;
            ThresholdStat {
                fraction,
                reached,
                runs: traces.len(),
                median_time_s: if enough { median(hits.iter().map(|r| r.wall_time_s).collect()) } else { None },
                median_evals: if enough { median(hits.iter().map(|r| r.evals as f64).collect()) } else { None },
            }
        })
        .collect()
}

/// Seed of ensemble member `k`.
pub fn run_seed(cfg: &RunConfig, k: usize) -> u64 {
    cfg.seed.wrapping_add(k as u64)
}

/// Executes member `k` of the ensemble described by `cfg`.
///
/// The start point is drawn from stream 0 of the member's seed and all
/// estimator randomness from stream 1. The returned trace's final evaluation
/// count equals the objective's call counter.
pub fn run_single(cfg: &RunConfig, task: &Task, k: usize, deterministic: bool) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    let seed = run_seed(cfg, k);
    let init = task.sample_init(&mut RngStream::new(seed, 0));
    let mut rng = RngStream::new(seed, 1);
    let clock = if deterministic {
        Clock::Virtual { seconds_per_eval: VIRTUAL_SECONDS_PER_EVAL }
    } else {
        Clock::Wall
    };
    let control = RunControl::new(cfg.budget(), clock)?;
    let obj = Counted::new(task);
    let trace = run_method(cfg, &obj, task, &init, &control, &mut rng)?;
    if let Some(last) = trace.last() {
        debug_assert_eq!(last.evals, obj.evals());
    }
    Ok(trace)
}

fn run_method(
    cfg: &RunConfig,
    obj: &dyn Objective,
    task: &Task,
    init: &DVector<f64>,
    control: &RunControl,
    rng: &mut RngStream,
) -> Result<ConvergenceTrace> {
    let n = task.dim();
    let schedule = SigmaSchedule::new(cfg.sigma_start, cfg.sigma_end, SCHEDULE_STEPS)?;
    let spec = KernelSpec::new(cfg.sigma_start, n)?;
    let mode = cfg.mode();
    let mut grad_cfg = EstimatorConfig::new(spec, cfg.samples, mode)?;
    let mut curv_cfg = EstimatorConfig::new(spec, cfg.curvature_samples.unwrap_or(cfg.samples), mode)?;
    if let Some(eps) = cfg.hvp_epsilon {
        grad_cfg = grad_cfg.with_hvp_epsilon(eps)?;
        curv_cfg = curv_cfg.with_hvp_epsilon(eps)?;
    }
    let monitor = |theta: &DVector<f64>| task.monitor(theta);
    if cfg.method.is_first_order() {
        let lr = cfg.lr.ok_or_else(|| Error::Config("lr missing".into()))?;
        let method = match cfg.method {
            Method::FD => GradientMethod::FiniteDifference { step: cfg.fd_step.unwrap_or(DEFAULT_FD_STEP) },
            Method::FR22 => GradientMethod::AxisBlur(grad_cfg),
            _ => GradientMethod::Smoothed(grad_cfg),
        };
        return gd_adam_run(obj, &method, init, &schedule, lr, control, rng, &monitor);
    }
    let tr = TrustRegion::new(cfg.delta.ok_or_else(|| Error::Config("delta missing".into()))?)?;
    let ls_iters = cfg.ls_iters.unwrap_or(DEFAULT_LS_ITERS);
    let cg = CgSettings {
        ls_iters,
        ls_tol: cfg.ls_tol.unwrap_or(DEFAULT_LS_TOL),
        recompute: cfg.recompute.unwrap_or(ls_iters),
    };
    match cfg.method {
        Method::OurH => {
            let mut source = SampledHessian::new(grad_cfg, curv_cfg);
            newton_cg_run(obj, &mut source, init, &schedule, &tr, &cg, control, rng, &monitor)
        }
        _ => {
            let mut source = SampledHvp::new(grad_cfg, curv_cfg);
            newton_cg_run(obj, &mut source, init, &schedule, &tr, &cg, control, rng, &monitor)
        }
    }
}

/// Runs every ensemble member in parallel and collects traces in member
/// order, so the result depends only on the config.
pub fn run_ensemble(cfg: &RunConfig, deterministic: bool) -> Result<EnsembleResult> {
    cfg.validate()?;
    let task = Task::by_name(&cfg.task)?;
    let traces = (0..cfg.ensemble)
        .into_par_iter()
        .map(|k| run_single(cfg, &task, k, deterministic))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = threshold_stats(&traces);
    Ok(EnsembleResult { config: Some(cfg.clone()), traces, thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;

    fn trace(losses: &[f64]) -> ConvergenceTrace {
        let mut t = ConvergenceTrace::new();
        for (k, l) in losses.iter().enumerate() {
            t.push(TraceRecord { wall_time_s: k as f64, iter: k as u64, evals: 10 * k as u64, loss: *l, param_error: 0.0 });
        }
        t
    }

    #[test]
    fn thresholds_need_half_the_runs() {
        let traces = vec![trace(&[1.0, 0.05, 0.002]), trace(&[1.0, 0.5, 0.2]), trace(&[1.0, 0.08, 0.0])];
        let s = threshold_stats(&traces);
        assert_eq!(s[0].reached, 2);
        assert_eq!(s[0].median_evals, Some(10.0));
        assert_eq!(s[1].reached, 2);
        assert_eq!(s[1].median_evals, Some(20.0));
        assert_eq!(s[2].reached, 1);
        assert_eq!(s[2].median_evals, None);
    }

    #[test]
    fn aborted_runs_are_unreached() {
        let mut t = trace(&[1.0, 0.0]);
        t.aborted = Some("boom".into());
        let s = threshold_stats(&[t]);
        assert_eq!(s[0].reached, 0);
        assert!(s[0].median_time_s.is_none());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
