//! Trace files: CSV with one row per record, or JSON with the config echo and
//! threshold table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::ensemble::{threshold_stats, EnsembleResult, ThresholdStat};
use crate::trace::{ConvergenceTrace, TraceRecord};

/// Header of the CSV trace format.
pub const CSV_HEADER: &str = "run,wall_time_s,iter,evals,loss,param_error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    /// Format implied by a file extension (`.json`, else CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => TraceFormat::Json,
            _ => TraceFormat::Csv,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    run: usize,
    wall_time_s: f64,
    iter: u64,
    evals: u64,
    loss: f64,
    param_error: f64,
}

fn check_nonempty(result: &EnsembleResult) -> Result<()> {
    if result.traces.is_empty() || result.traces.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyTrace);
    }
    Ok(())
}

pub fn write_csv<W: Write>(result: &EnsembleResult, out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for (run, trace) in result.traces.iter().enumerate() {
        for r in &trace.records {
            w.serialize(CsvRow {
                run,
                wall_time_s: r.wall_time_s,
                iter: r.iter,
                evals: r.evals,
                loss: r.loss,
                param_error: r.param_error,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ConvergenceTrace>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = rdr.records();
    let header = records.next().ok_or("missing header")?.map_err(|e| e.to_string())?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut traces: Vec<ConvergenceTrace> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| e.to_string())?;
        let row: CsvRow = rec.deserialize(None).map_err(|e| e.to_string())?;
        if row.run >= traces.len() {
            traces.resize_with(row.run + 1, ConvergenceTrace::new);
        }
        traces[row.run].records.push(TraceRecord {
            wall_time_s: row.wall_time_s,
            iter: row.iter,
            evals: row.evals,
            loss: row.loss,
            param_error: row.param_error,
        });
    }
    Ok(traces)
}

/// Writes `result` to `path`. Empty ensembles and empty traces are rejected.
pub fn export_traces(result: &EnsembleResult, path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let path = path.as_ref();
    check_nonempty(result)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        TraceFormat::Csv => write_csv(result, &mut out).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format { path: path.to_path_buf(), reason: format!("{other:?}") },
        })?,
        TraceFormat::Json => serde_json::to_writer_pretty(&mut out, result)
            .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads a trace file; the format follows the extension. CSV files carry no
/// config, so thresholds are recomputed from the records.
pub fn import_traces(path: impl AsRef<Path>) -> Result<EnsembleResult> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fmt_err = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let result = match TraceFormat::from_path(path) {
        TraceFormat::Json => serde_json::from_reader(reader).map_err(|e| fmt_err(e.to_string()))?,
        TraceFormat::Csv => {
            let traces = read_csv(reader).map_err(fmt_err)?;
            let thresholds = threshold_stats(&traces);
            EnsembleResult { config: None, traces, thresholds }
        }
    };
    if result.traces.is_empty() {
        return Err(fmt_err("file holds no trace records".into()));
    }
    Ok(result)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV threshold table; unreached cells are empty.
pub fn threshold_table(label: &str, stats: &[ThresholdStat]) -> String {
    let mut out = String::from("label,fraction,reached,runs,median_time_s,median_evals\n");
    for s in stats {
        out.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            s.fraction,
            s.reached,
            s.runs,
            fmt_opt(s.median_time_s),
            fmt_opt(s.median_evals)
        ));
    }
    out
}
