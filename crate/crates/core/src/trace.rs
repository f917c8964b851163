//! Per-run convergence records.

use serde::{Deserialize, Serialize};

/// One observation of a running optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub wall_time_s: f64,
    pub iter: u64,
    pub evals: u64,
    /// Loss measured from the task's optimum, so it is zero at the solution.
    pub loss: f64,
    pub param_error: f64,
}

/// Time-ordered records of one run. Wall time and evaluation counts never
/// decrease.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// Set when the run stopped on an error instead of its budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, clamping time and evaluation counts so they stay
    /// nondecreasing.
    pub fn push(&mut self, mut rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            rec.wall_time_s = rec.wall_time_s.max(last.wall_time_s);
            rec.evals = rec.evals.max(last.evals);
        }
        self.records.push(rec);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First record whose loss is at most `(1 - fraction)` of the initial
    /// loss. With a zero initial loss every record qualifies.
    pub fn first_crossing(&self, fraction: f64) -> Option<&TraceRecord> {
        let l0 = self.first()?.loss;
        let target = (1.0 - fraction) * l0;
        self.records.iter().find(|r| r.loss <= target)
    }
}
