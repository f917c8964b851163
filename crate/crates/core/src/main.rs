//! Command-line benchmark runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use smoothdiff::estimators::SamplingMode;
use smoothdiff::harness::export::threshold_table;
use smoothdiff::harness::{
    export_traces, import_traces, load_config, run_ensemble, selftest, variance_report, DerivativeOrder,
    EnsembleResult, RunConfig, TraceFormat, VarianceSettings,
};
use smoothdiff::optimizers::Budget;
use smoothdiff::tasks::Task;
use smoothdiff::{Error, Result};

#[derive(Parser)]
#[command(name = "smoothdiff", version, about = "Smoothed-derivative estimators and optimizer benchmarks")]
struct Cli {
    /// Worker threads for ensemble and variance runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(multiple = false)]
struct BudgetArgs {
    /// Override every run's budget with a wall-clock limit per run.
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Override every run's budget with an evaluation limit per run.
    #[arg(long)]
    budget_evals: Option<u64>,
}

impl BudgetArgs {
    fn budget(&self) -> Option<Budget> {
        match (self.budget_seconds, self.budget_evals) {
            (Some(s), _) => Some(Budget::Seconds(s)),
            (None, Some(e)) => Some(Budget::Evals(e)),
            (None, None) => None,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Section to run; required when the file defines several runs.
    #[arg(long)]
    name: Option<String>,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Trace file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace format; inferred from the output extension when omitted.
    #[arg(long, value_enum)]
    format: Option<TraceFormat>,
    /// Charge a fixed virtual time per evaluation instead of reading the wall
    /// clock, so repeated runs produce identical files.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file; every section is one method configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run every section on each of these tasks instead of its own.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Output directory for trace files and `summary.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: TraceFormat,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PerElement,
    Aggregate,
    Uniform,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PerElement => SamplingMode::PerElementIS,
            ModeArg::Aggregate => SamplingMode::AggregateIS,
            ModeArg::Uniform => SamplingMode::Uniform,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Gradient,
    Hessian,
    Hvp,
}

impl From<OrderArg> for DerivativeOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Gradient => DerivativeOrder::Gradient,
            OrderArg::Hessian => DerivativeOrder::Hessian,
            OrderArg::Hvp => DerivativeOrder::Hvp,
        }
    }
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(long, default_value = "neg_gauss")]
    task: String,
    /// Evaluation point; defaults to the task's true parameters.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Evaluation budgets per estimate.
    #[arg(long, value_delimiter = ',', default_value = "60,120,240,480,960")]
    budgets: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "per-element,aggregate,uniform")]
    modes: Vec<ModeArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gradient,hessian,hvp")]
    orders: Vec<OrderArg>,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON (`.json`) or as the text table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace files written by `run` or `sweep`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble from a config file.
    Run(RunArgs),
    /// Run every configured method, optionally across several tasks.
    Sweep(SweepArgs),
    /// Estimator variance against evaluation budget.
    Variance(VarianceArgs),
    /// Print threshold tables for trace files.
    Summarize(SummarizeArgs),
    /// Check kernel, sampler and estimator invariants.
    Selftest(SelftestArgs),
}

fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, budget: &BudgetArgs) -> Result<()> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = budget.budget() {
        cfg.set_budget(b);
    }
    cfg.validate()
}

fn write_result(result: &EnsembleResult, path: &Path, format: Option<TraceFormat>) -> Result<()> {
    let format = format.unwrap_or_else(|| TraceFormat::from_path(path));
    export_traces(result, path, format)
}

fn run(args: RunArgs) -> Result<()> {
    let mut file = load_config(&args.config)?;
    let (name, mut cfg) = match args.name {
        Some(name) => {
            let cfg = file.remove(&name).ok_or_else(|| Error::Config(format!("no run named `{name}`")))?;
            (name, cfg)
        }
        None if file.len() == 1 => file.into_iter().next().expect("one entry"),
        None => {
            let names: Vec<_> = file.keys().cloned().collect();
            return Err(Error::Config(format!("config has several runs; pick one with --name ({})", names.join(", "))));
        }
    };
    apply_overrides(&mut cfg, args.seed, &args.budget)?;
    let result = run_ensemble(&cfg, args.deterministic)?;
    if let Some(out) = &args.out {
        write_result(&result, out, args.format)?;
    }
    print!("{}", threshold_table(&name, &result.thresholds));
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let ext = match args.format {
        TraceFormat::Csv => "csv",
        TraceFormat::Json => "json",
    };
    let mut summary = String::new();
    for (name, base) in &file {
        let tasks = if args.tasks.is_empty() { vec![base.task.clone()] } else { args.tasks.clone() };
        for task in tasks {
            let mut cfg = base.clone();
            cfg.task = task.clone();
            apply_overrides(&mut cfg, args.seed, &args.budget)?;
            let label = format!("{name}_{task}");
            let result = run_ensemble(&cfg, args.deterministic)?;
            export_traces(&result, args.out.join(format!("{label}.{ext}")), args.format)?;
            let table = threshold_table(&label, &result.thresholds);
            if summary.is_empty() {
                summary.push_str(&table);
            } else {
                summary.extend(table.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
    }
    let path = args.out.join("summary.csv");
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

fn variance(args: VarianceArgs) -> Result<()> {
    let task = Task::by_name(&args.task)?;
    let theta = if args.theta.is_empty() {
        task.theta_true().clone()
    } else {
        DVector::from_vec(args.theta.clone())
    };
    let settings = VarianceSettings {
        sigma: args.sigma,
        repetitions: args.repetitions,
        seed: args.seed,
        orders: args.orders.iter().map(|&o| o.into()).collect(),
    };
    let modes: Vec<SamplingMode> = args.modes.iter().map(|&m| m.into()).collect();
    let report = variance_report(&task, &theta, &modes, &args.budgets, &settings)?;
    let table = report.to_table();
    if let Some(out) = &args.out {
        let text = match TraceFormat::from_path(out) {
            TraceFormat::Json => serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format { path: out.clone(), reason: e.to_string() })?,
            TraceFormat::Csv => table.clone(),
        };
        std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    print!("{table}");
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let mut header = true;
    for path in &args.files {
        let result = import_traces(path)?;
        let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("traces");
        let table = threshold_table(label, &result.thresholds);
        let skip = if header { 0 } else { 1 };
        header = false;
        for line in table.lines().skip(skip) {
            println!("{line}");
        }
    }
    Ok(())
}

fn run_selftest(args: SelftestArgs) -> Result<bool> {
    let checks = selftest(args.seed)?;
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Variance(a) => variance(a).map(|_| true),
        Command::Summarize(a) => summarize(a).map(|_| true),
        Command::Selftest(a) => run_selftest(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
