//! Run configuration and its TOML file format.
//!
//! A config file holds one table per run; the table name is the run name:
//!
//! ```toml
//! [quad_hvpa]
//! task = "quad"
//! method = "OurHVPA"
//! samples = 4
//! sigma_start = 0.5
//! sigma_end = 0.1
//! delta = 1.0
//! ls_iters = 4
//! ls_tol = 1e-3
//! recompute = 4
//! seed = 1
//! budget_evals = 4000
//! ensemble = 20
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SamplingMode;
use crate::optimizers::Budget;

/// Optimization method. The first three use Adam gradient descent, the rest
/// use Newton-CG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Central finite differences.
    FD,
    /// Smoothed gradient blurred only along the differentiated axis.
    FR22,
    /// Importance-sampled smoothed gradient.
    OurG,
    /// Sampled gradient and full sampled Hessian.
    OurH,
    /// Sampled gradient and per-element Hessian-vector products.
    OurHVP,
    /// Aggregate-sampled gradient and Hessian-vector products.
    OurHVPA,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::FD, Method::FR22, Method::OurG, Method::OurH, Method::OurHVP, Method::OurHVPA];

    pub fn is_first_order(self) -> bool {
        matches!(self, Method::FD | Method::FR22 | Method::OurG)
    }

    /// Sampling mode used when the config does not set one.
    pub fn default_mode(self) -> SamplingMode {
        match self {
            Method::OurHVPA => SamplingMode::AggregateIS,
            _ => SamplingMode::PerElementIS,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

fn default_samples() -> usize {
    1
}

fn default_ensemble() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub method: Method,
    /// Antithetic pairs per gradient estimate.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Antithetic pairs per Hessian or HVP estimate; defaults to `samples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_samples: Option<usize>,
    pub sigma_start: f64,
    pub sigma_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ls_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ls_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recompute: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_evals: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    /// Finite-difference step for `FD`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hvp_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SamplingMode>,
}

pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_LS_ITERS: usize = 4;
pub const DEFAULT_LS_TOL: f64 = 1e-3;

impl RunConfig {
    /// Checks value ranges, the budget, and that step-control parameters
    /// match the method's order.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.samples == 0 || self.curvature_samples == Some(0) {
            return bad("samples must be >= 1".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble must be >= 1".into());
        }
        for (name, s) in [("sigma_start", self.sigma_start), ("sigma_end", self.sigma_end)] {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("{name} must be > 0, got {s}"));
            }
        }
        match (self.budget_evals, self.budget_seconds) {
            (Some(0), _) => return bad("budget_evals must be >= 1".into()),
            (Some(_), None) => {}
            (None, Some(s)) if s.is_finite() && s > 0.0 => {}
            (None, Some(s)) => return bad(format!("budget_seconds must be > 0, got {s}")),
            (None, None) => return bad("one of budget_evals or budget_seconds is required".into()),
            (Some(_), Some(_)) => return bad("budget_evals and budget_seconds are exclusive".into()),
        }
        let second_order = [
            ("delta", self.delta.is_some()),
            ("ls_iters", self.ls_iters.is_some()),
            ("ls_tol", self.ls_tol.is_some()),
            ("recompute", self.recompute.is_some()),
        ];
        if self.method.is_first_order() {
            match self.lr {
                Some(lr) if lr.is_finite() && lr > 0.0 => {}
                Some(lr) => return bad(format!("lr must be > 0, got {lr}")),
                None => return bad(format!("method {} requires lr", self.method)),
            }
            if let Some((name, _)) = second_order.iter().find(|(_, set)| *set) {
                return bad(format!("{name} applies only to second-order methods, not {}", self.method));
            }
        } else {
            if self.lr.is_some() {
                return bad(format!("lr applies only to first-order methods, not {}", self.method));
            }
            match self.delta {
                Some(d) if d > 0.0 => {}
                Some(d) => return bad(format!("delta must be > 0, got {d}")),
                None => return bad(format!("method {} requires delta", self.method)),
            }
            if self.ls_iters == Some(0) || self.recompute == Some(0) {
                return bad("ls_iters and recompute must be >= 1".into());
            }
            if self.ls_tol.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                return bad("ls_tol must be >= 0".into());
            }
        }
        if self.fd_step.is_some() && self.method != Method::FD {
            return bad("fd_step applies only to FD".into());
        }
        if self.fd_step.is_some_and(|h| !(h.is_finite() && h > 0.0)) {
            return bad("fd_step must be > 0".into());
        }
        if self.hvp_epsilon.is_some_and(|e| !(e.is_finite() && e > 0.0)) {
            return bad("hvp_epsilon must be > 0".into());
        }
        Ok(())
    }

    pub fn budget(&self) -> Budget {
        match (self.budget_evals, self.budget_seconds) {
            (Some(e), _) => Budget::Evals(e),
            (None, Some(s)) => Budget::Seconds(s),
            (None, None) => Budget::Evals(1),
        }
    }

    pub fn set_budget(&mut self, budget: Budget) {
        match budget {
            Budget::Evals(e) => {
                self.budget_evals = Some(e);
                self.budget_seconds = None;
            }
            Budget::Seconds(s) => {
                self.budget_seconds = Some(s);
                self.budget_evals = None;
            }
        }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode.unwrap_or(self.method.default_mode())
    }
}

/// Named runs from a config file, ordered by name.
pub type ConfigFile = BTreeMap<String, RunConfig>;

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if file.is_empty() {
        return Err(Error::Config("config defines no runs".into()));
    }
    for (name, cfg) in &file {
        cfg.validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
    }
    Ok(file)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Format { path: path.to_path_buf(), reason: msg },
        other => other,
    })
}
