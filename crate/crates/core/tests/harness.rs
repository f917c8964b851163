use std::path::PathBuf;

use nalgebra::DVector;
use proptest::prelude::*;
use smoothdiff::estimators::{Counted, EstimatorConfig, SamplingMode};
use smoothdiff::harness::{
    export_traces, import_traces, load_config, parse_config, run_ensemble, threshold_stats, variance_report,
    ConvergenceTrace, DerivativeOrder, EnsembleResult, RunConfig, TraceFormat, TraceRecord, VarianceSettings,
    CSV_HEADER,
};
use smoothdiff::kernels::KernelSpec;
use smoothdiff::optimizers::{
    gd_adam_run, newton_cg_run, Budget, CgSettings, Clock, CurvatureSource, GradientMethod, RunControl,
    SampledHessian, SampledHvp, SigmaSchedule, TrustRegion,
};
use smoothdiff::samplers::RngStream;
use smoothdiff::tasks::Task;
use smoothdiff::Error;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn section(file: &str, name: &str) -> RunConfig {
    load_config(config_path(file)).unwrap().remove(name).unwrap()
}

fn small_result() -> EnsembleResult {
    let mut cfg = section("quad.toml", "ourhvpa");
    cfg.ensemble = 3;
    cfg.set_budget(Budget::Evals(300));
    run_ensemble(&cfg, true).unwrap()
}

#[test]
fn csv_and_json_round_trip_exactly() {
    let result = small_result();
    let dir = tempfile::tempdir().unwrap();
    for (file, format) in [("t.csv", TraceFormat::Csv), ("t.json", TraceFormat::Json)] {
        let path = dir.path().join(file);
        export_traces(&result, &path, format).unwrap();
        let back = import_traces(&path).unwrap();
        assert_eq!(back.traces, result.traces, "{file}");
        assert_eq!(back.thresholds, result.thresholds, "{file}");
        if format == TraceFormat::Json {
            assert_eq!(back.config, result.config);
        }
    }
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "run,wall_time_s,iter,evals,loss,param_error");
    assert_eq!(CSV_HEADER, "run,wall_time_s,iter,evals,loss,param_error");
    let rows = result.traces.iter().map(|t| t.len()).sum::<usize>();
    assert_eq!(text.lines().count(), rows + 1);
}

#[test]
fn empty_traces_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut result = small_result();
    result.traces[1] = ConvergenceTrace::new();
    let err = export_traces(&result, dir.path().join("x.csv"), TraceFormat::Csv).unwrap_err();
    assert!(err.to_string().to_lowercase().contains("empty"), "{err}");
    result.traces.clear();
    assert!(export_traces(&result, dir.path().join("x.json"), TraceFormat::Json).is_err());
}

#[test]
fn io_failures_name_the_path() {
    let err = export_traces(&small_result(), "/nonexistent-dir/x.csv", TraceFormat::Csv).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/x.csv"), "{err}");
    let err = import_traces("/nonexistent-dir/y.csv").unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/y.csv"), "{err}");
}

#[test]
fn config_validation() {
    let base = "task = \"quad\"\nsigma_start = 0.5\nsigma_end = 0.1\nbudget_evals = 100\n";
    let ok = |extra: &str| parse_config(&format!("[r]\n{base}{extra}"));
    assert!(ok("method = \"OurG\"\nlr = 0.1\n").is_ok());
    assert!(ok("method = \"OurHVPA\"\ndelta = 1.0\n").is_ok());
    for bad in [
        "method = \"OurG\"\n",
        "method = \"OurG\"\nlr = 0.1\ndelta = 1.0\n",
        "method = \"OurHVP\"\ndelta = 1.0\nlr = 0.1\n",
        "method = \"OurH\"\n",
        "method = \"FD\"\nlr = 0.1\nls_iters = 2\n",
        "method = \"OurG\"\nlr = -1.0\n",
        "method = \"OurG\"\nlr = 0.1\nbudget_seconds = 2.0\n",
        "method = \"OurG\"\nlr = 0.1\nunknown_key = 1\n",
        "method = \"Magic\"\nlr = 0.1\n",
        "method = \"OurG\"\nlr = 0.1\nsamples = 0\n",
        "method = \"OurG\"\nlr = 0.1\nfd_step = 1e-3\n",
    ] {
        assert!(matches!(ok(bad), Err(Error::Config(_))), "accepted:\n{bad}");
    }
    assert!(parse_config("").is_err());
    for file in ["quad.toml", "box2.toml", "box10.toml"] {
        load_config(config_path(file)).unwrap();
    }
}

#[test]
fn reported_evals_equal_objective_calls() {
    let task = Task::by_name("neg_gauss").unwrap();
    let init = DVector::from_vec(vec![1.5, -1.0]);
    let schedule = SigmaSchedule::new(0.8, 0.2, 1000).unwrap();
    let cfg = EstimatorConfig::new(KernelSpec::new(0.8, 2).unwrap(), 3, SamplingMode::PerElementIS).unwrap();
    let monitor = |t: &DVector<f64>| task.monitor(t);
    let control = || RunControl::new(Budget::Evals(500), Clock::Virtual { seconds_per_eval: 1e-3 }).unwrap();
    for method in [
        GradientMethod::FiniteDifference { step: 1e-4 },
        GradientMethod::AxisBlur(cfg),
        GradientMethod::Smoothed(cfg),
    ] {
        let obj = Counted::new(&task);
        let trace = gd_adam_run(&obj, &method, &init, &schedule, 0.05, &control(), &mut RngStream::new(1, 1), &monitor).unwrap();
        assert_eq!(trace.last().unwrap().evals, obj.evals(), "{method:?}");
    }
    let agg = EstimatorConfig::new(KernelSpec::new(0.8, 2).unwrap(), 3, SamplingMode::AggregateIS).unwrap();
    let sources: Vec<Box<dyn CurvatureSource>> = vec![
        Box::new(SampledHessian::new(cfg, cfg)),
        Box::new(SampledHvp::new(cfg, cfg)),
        Box::new(SampledHvp::new(agg, agg)),
    ];
    for mut source in sources {
        let obj = Counted::new(&task);
        let trace = newton_cg_run(
            &obj,
            source.as_mut(),
            &init,
            &schedule,
            &TrustRegion::new(0.5).unwrap(),
            &CgSettings { ls_iters: 3, ls_tol: 1e-3, recompute: 2 },
            &control(),
            &mut RngStream::new(1, 1),
            &monitor,
        )
        .unwrap();
        let last = trace.last().unwrap();
        assert_eq!(last.evals, obj.evals());
        assert!(last.evals >= 500);
        assert!(trace.records.windows(2).all(|w| w[0].evals <= w[1].evals && w[0].wall_time_s <= w[1].wall_time_s));
    }
}

#[test]
fn quad_hvpa_ten_seconds_reaches_every_threshold() {
    let mut cfg = section("quad.toml", "ourhvpa");
    cfg.set_budget(Budget::Seconds(10.0));
    let result = run_ensemble(&cfg, true).unwrap();
    assert_eq!(result.traces.len(), 20);
    let last = result.thresholds.last().unwrap();
    assert_eq!(last.fraction, 0.999);
    assert_eq!(last.reached, 20, "{:?}", result.thresholds);
}

#[test]
fn finite_differences_stay_on_box_plateau() {
    let result = run_ensemble(&section("box2.toml", "fd"), true).unwrap();
    for s in &result.thresholds {
        assert_eq!(s.reached, 0, "{s:?}");
        assert!(s.median_evals.is_none());
    }
    for t in &result.traces {
        assert!(t.records.iter().all(|r| r.loss == t.records[0].loss));
    }
}

#[test]
fn ensembles_are_deterministic() {
    let mut cfg = section("box2.toml", "ourg");
    cfg.ensemble = 4;
    assert_eq!(run_ensemble(&cfg, true).unwrap(), run_ensemble(&cfg, true).unwrap());
}

#[test]
fn variance_decays_as_inverse_budget() {
    let task = Task::by_name("neg_gauss").unwrap();
    let theta = DVector::from_vec(vec![0.5, -0.3]);
    let settings = VarianceSettings { sigma: 1.0, repetitions: 200, seed: 9, orders: vec![DerivativeOrder::Gradient, DerivativeOrder::Hvp] };
    let modes = [SamplingMode::AggregateIS, SamplingMode::Uniform];
    let report = variance_report(&task, &theta, &modes, &[60, 240, 960, 3840], &settings).unwrap();
    for s in &report.slopes {
        assert!((s.slope + 1.0).abs() <= 0.15, "{s:?}");
    }
    assert!(report.to_table().contains("slope"));
    assert!(variance_report(&task, &theta, &modes, &[1], &settings).is_err());
    assert!(variance_report(&task, &DVector::zeros(3), &modes, &[60], &settings).is_err());
}

fn decreasing_trace(steps: &[f64]) -> ConvergenceTrace {
    let mut t = ConvergenceTrace::new();
    let mut loss = 1.0;
    for (k, s) in steps.iter().enumerate() {
        t.push(TraceRecord { wall_time_s: k as f64 * 0.5, iter: k as u64, evals: 4 * k as u64, loss, param_error: loss });
        loss *= s;
    }
    t
}

proptest! {
    #[test]
    fn threshold_times_are_ordered(runs in prop::collection::vec(prop::collection::vec(0.0f64..1.2, 2..40), 1..8)) {
        let traces: Vec<_> = runs.iter().map(|r| decreasing_trace(r)).collect();
        for t in &traces {
            let hits: Vec<_> = [0.9, 0.99, 0.999].iter().map(|&f| t.first_crossing(f).map(|r| r.wall_time_s)).collect();
            for w in hits.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    prop_assert!(a <= b);
                }
                if w[0].is_none() {
                    prop_assert!(w[1].is_none());
                }
            }
        }
        let stats = threshold_stats(&traces);
        for w in stats.windows(2) {
            prop_assert!(w[0].reached >= w[1].reached);
        }
        for s in &stats {
            prop_assert_eq!(s.median_evals.is_some(), s.reached > 0 && 2 * s.reached >= traces.len());
        }
    }
}
