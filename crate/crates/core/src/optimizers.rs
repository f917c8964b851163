//! Optimization loops driven by sampled derivatives: Adam gradient descent,
//! Newton steps on a PSD-modified Hessian, and Newton-CG with Fletcher-Reeves
//! directions inside a trust region.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_gradient, estimate_gradient_fd, estimate_gradient_fr22, estimate_hessian, estimate_hvp,
    EstimatorConfig, GradientEstimate, HessianEstimate, Objective,
};
use crate::samplers::RngStream;
use crate::trace::{ConvergenceTrace, TraceRecord};

/// Linear bandwidth schedule from `sigma_start` to `sigma_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigma_start: f64,
    sigma_end: f64,
    total_iters: u64,
}

impl SigmaSchedule {
    pub fn new(sigma_start: f64, sigma_end: f64, total_iters: u64) -> Result<Self> {
        for (name, s) in [("sigma_start", sigma_start), ("sigma_end", sigma_end)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {s}")));
            }
        }
        Ok(Self { sigma_start, sigma_end, total_iters })
    }

    pub fn constant(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, 1)
    }

    pub fn sigma_start(&self) -> f64 {
        self.sigma_start
    }

    pub fn sigma_end(&self) -> f64 {
        self.sigma_end
    }

    pub fn total_iters(&self) -> u64 {
        self.total_iters
    }

    /// Bandwidth at `iter`, held at `sigma_end` past `total_iters`.
    pub fn at(&self, iter: u64) -> f64 {
        if self.total_iters == 0 {
            return self.sigma_end;
        }
        self.at_fraction(iter as f64 / self.total_iters as f64)
    }

    /// Bandwidth at a fraction of the schedule, clamped to `[0, 1]`.
    pub fn at_fraction(&self, t: f64) -> f64 {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let s = self.sigma_start + t * (self.sigma_end - self.sigma_start);
        let (lo, hi) = if self.sigma_start <= self.sigma_end {
            (self.sigma_start, self.sigma_end)
        } else {
            (self.sigma_end, self.sigma_start)
        };
        s.clamp(lo, hi)
    }
}

pub fn anneal_sigma(schedule: &SigmaSchedule, iter: u64) -> f64 {
    schedule.at(iter)
}

/// Step-length cap `Δ`. An infinite radius disables the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegion {
    delta: f64,
}

impl TrustRegion {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::invalid("delta", format!("must be > 0, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn unbounded() -> Self {
        Self { delta: f64::INFINITY }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest step multiplier along a direction of length `norm`.
    pub fn max_alpha(&self, norm: f64) -> f64 {
        if norm == 0.0 {
            return f64::INFINITY;
        }
        self.delta / norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: DVector<f64>,
    pub iter: u64,
    pub adam: AdamParams,
    pub adam_m: DVector<f64>,
    pub adam_v: DVector<f64>,
    pub cg_direction: Option<DVector<f64>>,
    pub cg_residual: Option<DVector<f64>>,
    pub trace: ConvergenceTrace,
}

impl OptimizerState {
    pub fn new(theta: DVector<f64>) -> Self {
        let n = theta.len();
        Self {
            theta,
            iter: 0,
            adam: AdamParams::default(),
            adam_m: DVector::zeros(n),
            adam_v: DVector::zeros(n),
            cg_direction: None,
            cg_residual: None,
            trace: ConvergenceTrace::new(),
        }
    }
}

fn check_finite_vec(what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState(format!("{what} {v:?}")))
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// One Adam update on `state` with a (stochastic) gradient.
pub fn gd_adam_step(state: &mut OptimizerState, grad: &GradientEstimate, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid("lr", format!("must be > 0, got {lr}")));
    }
    check_len(state.theta.len(), grad.g.len())?;
    check_finite_vec("gradient", &grad.g)?;
    let AdamParams { beta1, beta2, eps } = state.adam;
    state.iter += 1;
    let t = state.iter as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..state.theta.len() {
        let g = grad.g[i];
        state.adam_m[i] = beta1 * state.adam_m[i] + (1.0 - beta1) * g;
        state.adam_v[i] = beta2 * state.adam_v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.adam_m[i] / c1;
        let v_hat = state.adam_v[i] / c2;
        state.theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    check_finite_vec("theta", &state.theta)
}

/// Eigenvalue floor used by [`psd_modify`]: `1e-6 · max(max|λ|, 1)`.
pub fn psd_floor(eigenvalues: &DVector<f64>) -> f64 {
    let scale = eigenvalues.iter().fold(1.0_f64, |m, l| m.max(l.abs()));
    1e-6 * scale
}

/// Symmetric matrix with every eigenvalue raised to at least [`psd_floor`].
pub fn psd_modify(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h.nrows() != h.ncols() {
        return Err(Error::ShapeMismatch(format!("hessian is {}x{}", h.nrows(), h.ncols())));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState("hessian".into()));
    }
    let sym = 0.5 * (h + h.transpose());
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(Error::Eigen)?;
    let floor = psd_floor(&eig.eigenvalues);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = a;
            out[(j, i)] = a;
        }
    }
    Ok(out)
}

/// Newton direction `−H̃⁻¹ g` on the PSD-modified Hessian.
pub fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_len(h.nrows(), g.len())?;
    check_finite_vec("gradient", g)?;
    if h.nrows() != h.ncols() {
        return Err(Error::ShapeMismatch(format!("hessian is {}x{}", h.nrows(), h.ncols())));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState("hessian".into()));
    }
    let sym = 0.5 * (h + h.transpose());
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(Error::Eigen)?;
    let floor = psd_floor(&eig.eigenvalues);
    let q = &eig.eigenvectors;
    let coeffs = q.transpose() * g;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| -c / l.max(floor)),
    );
    Ok(q * scaled)
}

/// One Newton update with PSD modification, truncated to the trust region.
pub fn newton_step(
    state: &mut OptimizerState,
    grad: &GradientEstimate,
    hess: &HessianEstimate,
    tr: &TrustRegion,
) -> Result<()> {
    check_len(state.theta.len(), grad.g.len())?;
    let v = newton_direction(&grad.g, &hess.h)?;
    let scale = tr.max_alpha(v.norm()).min(1.0);
    state.theta += scale * v;
    state.iter += 1;
    check_finite_vec("theta", &state.theta)
}

/// Outcome of one conjugate-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub enum CgStep {
    /// Step `alpha · direction` taken along a positive-curvature direction.
    Step { alpha: f64, direction: DVector<f64> },
    /// `vᵀHv ≤ 0`; the caller should fall back to the residual direction.
    NegativeCurvature { residual: DVector<f64> },
}

/// Fletcher-Reeves conjugate-gradient iteration for `H d = −g`.
#[derive(Debug, Clone)]
pub struct FletcherReeves {
    residual: DVector<f64>,
    direction: DVector<f64>,
    rr: f64,
    rr0: f64,
}

impl FletcherReeves {
    /// Starts from `r = v = −g`.
    pub fn new(g: &DVector<f64>) -> Self {
        let r = -g;
        let rr = r.dot(&r);
        Self { direction: r.clone(), residual: r, rr, rr0: rr }
    }

    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    /// `‖r‖ / ‖r₀‖`.
    pub fn relative_residual(&self) -> f64 {
        if self.rr0 == 0.0 {
            return 0.0;
        }
        (self.rr / self.rr0).sqrt()
    }

    /// Advances with `hv = H · direction`. `alpha = rᵀv / vᵀHv`, which is
    /// `−gᵀv / vᵀHv` on the first step, limited to the trust region.
    pub fn step(&mut self, hv: &DVector<f64>, tr: &TrustRegion) -> CgStep {
        let v = &self.direction;
        let vhv = v.dot(hv);
        if !(vhv > 0.0) || !vhv.is_finite() {
            return CgStep::NegativeCurvature { residual: self.residual.clone() };
        }
        let cap = tr.max_alpha(v.norm());
        let alpha = (self.residual.dot(v) / vhv).clamp(-cap, cap);
        let taken = v.clone();
        self.residual -= alpha * hv;
        let rr_new = self.residual.dot(&self.residual);
        let beta = if self.rr > 0.0 { rr_new / self.rr } else { 0.0 };
        self.direction = &self.residual + beta * &self.direction;
        self.rr = rr_new;
        CgStep::Step { alpha, direction: taken }
    }
}

/// Inner-loop controls for Newton-CG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    /// Maximum conjugate steps per outer iteration.
    pub ls_iters: usize,
    /// Stop the inner loop when `‖r‖ ≤ ls_tol · ‖r₀‖`.
    pub ls_tol: f64,
    /// Inner steps between fresh derivative estimates.
    pub recompute: usize,
}

impl CgSettings {
    pub fn validate(&self) -> Result<()> {
        if self.ls_iters == 0 {
            return Err(Error::invalid("ls_iters", "must be >= 1"));
        }
        if !(self.ls_tol.is_finite() && self.ls_tol >= 0.0) {
            return Err(Error::invalid("ls_tol", format!("must be >= 0, got {}", self.ls_tol)));
        }
        if self.recompute == 0 {
            return Err(Error::invalid("recompute", "must be >= 1"));
        }
        Ok(())
    }
}

/// Stopping budget of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Evals(u64),
    Seconds(f64),
}

/// Time source for traces and wall-clock budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    Wall,
    /// Time derived from the evaluation count, for reproducible traces.
    Virtual { seconds_per_eval: f64 },
}

/// Budget, clock and an optional iteration cap for one run.
#[derive(Debug, Clone)]
pub struct RunControl {
    budget: Budget,
    clock: Clock,
    max_iters: Option<u64>,
    start: Instant,
}

impl RunControl {
    pub fn new(budget: Budget, clock: Clock) -> Result<Self> {
        match budget {
            Budget::Evals(0) => return Err(Error::invalid("budget", "evaluation budget must be >= 1")),
            Budget::Seconds(s) if !(s.is_finite() && s > 0.0) => {
                return Err(Error::invalid("budget", format!("seconds must be > 0, got {s}")))
            }
            _ => {}
        }
        if let Clock::Virtual { seconds_per_eval } = clock {
            if !(seconds_per_eval.is_finite() && seconds_per_eval > 0.0) {
                return Err(Error::invalid("seconds_per_eval", "must be > 0"));
            }
        }
        Ok(Self { budget, clock, max_iters: None, start: Instant::now() })
    }

    /// Caps outer iterations (Newton-CG) or updates (gradient descent).
    pub fn with_max_iters(mut self, max_iters: u64) -> Self {
        self.max_iters = Some(max_iters);
        self
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    /// Restarts the wall clock.
    pub fn restart(&mut self) {
        self.start = Instant::now();
    }

    pub fn elapsed(&self, evals: u64) -> f64 {
        match self.clock {
            Clock::Wall => self.start.elapsed().as_secs_f64(),
            // dividing by the rate keeps round eval counts at round times
            Clock::Virtual { seconds_per_eval } => evals as f64 / (1.0 / seconds_per_eval),
        }
    }

    /// Fraction of the budget consumed, in `[0, 1]`.
    pub fn progress(&self, evals: u64) -> f64 {
        let p = match self.budget {
            Budget::Evals(b) => evals as f64 / b as f64,
            Budget::Seconds(s) => self.elapsed(evals) / s,
        };
        p.clamp(0.0, 1.0)
    }

    pub fn exhausted(&self, evals: u64, iters: u64) -> bool {
        if self.max_iters.is_some_and(|m| iters >= m) {
            return true;
        }
        match self.budget {
            Budget::Evals(b) => evals >= b,
            Budget::Seconds(s) => self.elapsed(evals) >= s,
        }
    }
}

/// Maps a point to `(loss, param_error)` for trace records. Its evaluations
/// are not charged to the run.
pub type Monitor<'a> = &'a (dyn Fn(&DVector<f64>) -> (f64, f64) + Sync);

fn record(trace: &mut ConvergenceTrace, control: &RunControl, monitor: Monitor, iter: u64, evals: u64, theta: &DVector<f64>) {
    let (loss, param_error) = monitor(theta);
    trace.push(TraceRecord { wall_time_s: control.elapsed(evals), iter, evals, loss, param_error });
}

/// Derivative provider for [`newton_cg_run`].
pub trait CurvatureSource {
    /// Gradient at `theta` under bandwidth `sigma`.
    fn gradient(
        &mut self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        sigma: f64,
        rng: &mut RngStream,
    ) -> Result<GradientEstimate>;

    /// Called after every fresh gradient. Returns evaluations spent.
    fn refresh(
        &mut self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        sigma: f64,
        grad: &GradientEstimate,
        rng: &mut RngStream,
    ) -> Result<u64>;

    /// `H v` at `theta` and the evaluations spent.
    fn hvp(
        &mut self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        sigma: f64,
        rng: &mut RngStream,
    ) -> Result<(DVector<f64>, u64)>;
}

/// Sampled gradient plus a sampled, PSD-modified Hessian reused for every
/// product until the next refresh.
#[derive(Debug, Clone)]
pub struct SampledHessian {
    pub grad_cfg: EstimatorConfig,
    pub hess_cfg: EstimatorConfig,
    /// Subtract the gradient estimate's mean objective value in the Hessian
    /// estimate.
    pub use_baseline: bool,
    hess: Option<DMatrix<f64>>,
}

impl SampledHessian {
    pub fn new(grad_cfg: EstimatorConfig, hess_cfg: EstimatorConfig) -> Self {
        Self { grad_cfg, hess_cfg, use_baseline: true, hess: None }
    }

    pub fn hessian(&self) -> Option<&DMatrix<f64>> {
        self.hess.as_ref()
    }
}

impl CurvatureSource for SampledHessian {
    fn gradient(&mut self, obj: &dyn Objective, theta: &DVector<f64>, sigma: f64, rng: &mut RngStream) -> Result<GradientEstimate> {
        estimate_gradient(obj, theta, &self.grad_cfg.with_sigma(sigma)?, rng)
    }

    fn refresh(
        &mut self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        sigma: f64,
        grad: &GradientEstimate,
        rng: &mut RngStream,
    ) -> Result<u64> {
        let base = if self.use_baseline { grad.mean_value } else { None };
        let cfg = self.hess_cfg.with_sigma(sigma)?.with_baseline(base);
        let h = estimate_hessian(obj, theta, &cfg, rng)?;
        self.hess = Some(psd_modify(&h.h)?);
        Ok(h.evals_used)
    }

    fn hvp(
        &mut self,
        _obj: &dyn Objective,
        _theta: &DVector<f64>,
        v: &DVector<f64>,
        _sigma: f64,
        _rng: &mut RngStream,
    ) -> Result<(DVector<f64>, u64)> {
        let h = self.hess.as_ref().ok_or_else(|| Error::NonFiniteState("hessian not estimated".into()))?;
        Ok((h * v, 0))
    }
}

/// Sampled gradient plus a fresh sampled Hessian-vector product per CG step.
#[derive(Debug, Clone)]
pub struct SampledHvp {
    pub grad_cfg: EstimatorConfig,
    pub hvp_cfg: EstimatorConfig,
    /// Subtract the latest gradient estimate's mean objective value in HVP
    /// estimates.
    pub use_baseline: bool,
    baseline: Option<f64>,
}

impl SampledHvp {
    pub fn new(grad_cfg: EstimatorConfig, hvp_cfg: EstimatorConfig) -> Self {
        Self { grad_cfg, hvp_cfg, use_baseline: true, baseline: None }
    }
}

impl CurvatureSource for SampledHvp {
    fn gradient(&mut self, obj: &dyn Objective, theta: &DVector<f64>, sigma: f64, rng: &mut RngStream) -> Result<GradientEstimate> {
        estimate_gradient(obj, theta, &self.grad_cfg.with_sigma(sigma)?, rng)
    }

    fn refresh(
        &mut self,
        _obj: &dyn Objective,
        _theta: &DVector<f64>,
        _sigma: f64,
        grad: &GradientEstimate,
        _rng: &mut RngStream,
    ) -> Result<u64> {
        self.baseline = if self.use_baseline { grad.mean_value } else { None };
        Ok(0)
    }

    fn hvp(
        &mut self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        sigma: f64,
        rng: &mut RngStream,
    ) -> Result<(DVector<f64>, u64)> {
        let cfg = self.hvp_cfg.with_sigma(sigma)?.with_baseline(self.baseline);
        let e = estimate_hvp(obj, theta, v, &cfg, rng)?;
        Ok((e.hv, e.evals_used))
    }
}

/// Closed-form derivatives; spends no evaluations.
pub struct ExactCurvature<G, H> {
    pub grad: G,
    pub hess: H,
}

impl<G, H> CurvatureSource for ExactCurvature<G, H>
where
    G: FnMut(&DVector<f64>, f64) -> DVector<f64>,
    H: FnMut(&DVector<f64>, f64) -> DMatrix<f64>,
{
    fn gradient(&mut self, _obj: &dyn Objective, theta: &DVector<f64>, sigma: f64, _rng: &mut RngStream) -> Result<GradientEstimate> {
        Ok(GradientEstimate { g: (self.grad)(theta, sigma), evals_used: 0, std_error: None, mean_value: None })
    }

    fn refresh(
        &mut self,
        _obj: &dyn Objective,
        _theta: &DVector<f64>,
        _sigma: f64,
        _grad: &GradientEstimate,
        _rng: &mut RngStream,
    ) -> Result<u64> {
        Ok(0)
    }

    fn hvp(
        &mut self,
        _obj: &dyn Objective,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        sigma: f64,
        _rng: &mut RngStream,
    ) -> Result<(DVector<f64>, u64)> {
        Ok(((self.hess)(theta, sigma) * v, 0))
    }
}

fn validate_start(obj: &dyn Objective, init: &DVector<f64>) -> Result<()> {
    check_len(obj.dim(), init.len())?;
    check_finite_vec("initial theta", init)
}

/// Newton-CG with Fletcher-Reeves directions.
///
/// Each outer iteration estimates the gradient at the current bandwidth
/// (annealed over the budget), then takes up to `ls_iters` conjugate steps,
/// each truncated to the trust region. Every `recompute` inner steps the
/// gradient (and curvature) is re-estimated and CG restarts. A direction with
/// `vᵀHv ≤ 0` is replaced by a trust-region step along the residual, after
/// which a new outer iteration starts.
///
/// Setup errors are returned as `Err`. Errors raised while running stop the
/// run; the partial trace is returned with [`ConvergenceTrace::aborted`] set.
#[allow(clippy::too_many_arguments)]
pub fn newton_cg_run(
    obj: &dyn Objective,
    source: &mut dyn CurvatureSource,
    init: &DVector<f64>,
    schedule: &SigmaSchedule,
    tr: &TrustRegion,
    cg: &CgSettings,
    control: &RunControl,
    rng: &mut RngStream,
    monitor: Monitor,
) -> Result<ConvergenceTrace> {
    validate_start(obj, init)?;
    cg.validate()?;
    let mut state = OptimizerState::new(init.clone());
    let mut evals = 0u64;
    record(&mut state.trace, control, monitor, 0, evals, &state.theta);
    let mut outer = 0u64;
    let result = (|| -> Result<()> {
        while !control.exhausted(evals, outer) {
            let sigma = schedule.at_fraction(control.progress(evals));
            let evals_before = evals;
            let g = source.gradient(obj, &state.theta, sigma, rng)?;
            evals += g.evals_used;
            evals += source.refresh(obj, &state.theta, sigma, &g, rng)?;
            let mut fr = FletcherReeves::new(&g.g);
            outer += 1;
            if fr.rr0 == 0.0 {
                if evals == evals_before {
                    // exact derivatives at a stationary point
                    break;
                }
                continue;
            }
            for k in 0..cg.ls_iters {
                if k > 0 && k % cg.recompute == 0 {
                    if control.exhausted(evals, 0) {
                        break;
                    }
                    let g = source.gradient(obj, &state.theta, sigma, rng)?;
                    evals += g.evals_used;
                    evals += source.refresh(obj, &state.theta, sigma, &g, rng)?;
                    fr = FletcherReeves::new(&g.g);
                    if fr.rr0 == 0.0 {
                        break;
                    }
                }
                if control.exhausted(evals, 0) {
                    break;
                }
                let v = fr.direction().clone();
                let (hv, e) = source.hvp(obj, &state.theta, &v, sigma, rng)?;
                evals += e;
                check_finite_vec("hessian-vector product", &hv)?;
                state.cg_direction = Some(v);
                match fr.step(&hv, tr) {
                    CgStep::Step { alpha, direction } => {
                        state.theta += alpha * direction;
                        check_finite_vec("theta", &state.theta)?;
                        state.iter += 1;
                        state.cg_residual = Some(fr.residual().clone());
                        record(&mut state.trace, control, monitor, state.iter, evals, &state.theta);
                        if fr.relative_residual() <= cg.ls_tol {
                            break;
                        }
                    }
                    CgStep::NegativeCurvature { residual } => {
                        let norm = residual.norm();
                        let alpha = if tr.delta().is_finite() { tr.delta() / norm } else { 1.0 };
                        state.theta += alpha * residual;
                        check_finite_vec("theta", &state.theta)?;
                        state.iter += 1;
                        record(&mut state.trace, control, monitor, state.iter, evals, &state.theta);
                        break;
                    }
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        state.trace.aborted = Some(e.to_string());
    }
    if state.trace.last().is_some_and(|r| r.evals != evals) {
        record(&mut state.trace, control, monitor, state.iter, evals, &state.theta);
    }
    Ok(state.trace)
}

/// Gradient source for [`gd_adam_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    /// Central finite differences with the given step.
    FiniteDifference { step: f64 },
    /// Blur only along the differentiated axis.
    AxisBlur(EstimatorConfig),
    /// Importance-sampled smoothed gradient.
    Smoothed(EstimatorConfig),
}

impl GradientMethod {
    pub fn estimate(
        &self,
        obj: &dyn Objective,
        theta: &DVector<f64>,
        sigma: f64,
        rng: &mut RngStream,
    ) -> Result<GradientEstimate> {
        match self {
            GradientMethod::FiniteDifference { step } => estimate_gradient_fd(obj, theta, *step),
            GradientMethod::AxisBlur(cfg) => estimate_gradient_fr22(obj, theta, &cfg.with_sigma(sigma)?, rng),
            GradientMethod::Smoothed(cfg) => estimate_gradient(obj, theta, &cfg.with_sigma(sigma)?, rng),
        }
    }
}

/// Adam gradient descent until the budget is spent.
///
/// Error handling follows [`newton_cg_run`].
#[allow(clippy::too_many_arguments)]
pub fn gd_adam_run(
    obj: &dyn Objective,
    method: &GradientMethod,
    init: &DVector<f64>,
    schedule: &SigmaSchedule,
    lr: f64,
    control: &RunControl,
    rng: &mut RngStream,
    monitor: Monitor,
) -> Result<ConvergenceTrace> {
    validate_start(obj, init)?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid("lr", format!("must be > 0, got {lr}")));
    }
    let mut state = OptimizerState::new(init.clone());
    let mut evals = 0u64;
    record(&mut state.trace, control, monitor, 0, evals, &state.theta);
    let result = (|| -> Result<()> {
        while !control.exhausted(evals, state.iter) {
            let sigma = schedule.at_fraction(control.progress(evals));
            let g = method.estimate(obj, &state.theta, sigma, rng)?;
            evals += g.evals_used;
            gd_adam_step(&mut state, &g, lr)?;
            record(&mut state.trace, control, monitor, state.iter, evals, &state.theta);
        }
        Ok(())
    })();
    if let Err(e) = result {
        state.trace.aborted = Some(e.to_string());
    }
    Ok(state.trace)
}
