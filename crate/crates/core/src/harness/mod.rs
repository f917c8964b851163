//! Ensemble runner, threshold metrics, variance analysis and trace files.

pub mod config;
pub mod ensemble;
pub mod export;
pub mod selftest;
pub mod variance;

pub use crate::trace::{ConvergenceTrace, TraceRecord};
pub use config::{load_config, parse_config, ConfigFile, Method, RunConfig};
pub use ensemble::{run_ensemble, run_single, threshold_stats, EnsembleResult, ThresholdStat, THRESHOLDS};
pub use export::{export_traces, import_traces, TraceFormat, CSV_HEADER};
pub use variance::{variance_report, DerivativeOrder, VarianceReport, VarianceSettings};
pub use selftest::{selftest, SelfCheck};
