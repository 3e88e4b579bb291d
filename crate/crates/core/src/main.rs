use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use llm_budget::budget_controller::{BudgetRequest, Controller, PredictorMode};
use llm_budget::cost_model::{fit_linear, fit_quadratic, PredictorCoeffs};
use llm_budget::length_predictor::{eval_metrics, predict_length, BucketSpec, PredictorBackend};
use llm_budget::sim_engine::{run_simulation, sweep, Job, SimResult, Strategy, SweepAxis};
use llm_budget::trace_io::manifest::{Manifest, PolicySpec};
use llm_budget::trace_io::synth::{generate_profiling, generate_trace, ProfileKind, SyntheticSpec};
use llm_budget::trace_io::{self, ModelFile, PredictionRow, SweepRecord};
use llm_budget::Error;

const EXIT_DATA: u8 = 3;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 4;

const FORMATS_HELP: &str = "\
FILE FORMATS (all times in milliseconds)
  profile     # unit=ms / header n,t_ms
  trace       # unit=ms / header id,arrival_ms,n_x,n_true,budget_ms,task_class
  lookup      header prompt_id,bucket (bucket labels are 1-based)
  model       TOML: model_kind = quadratic|linear, unit = \"ms\", [coefficients]
              a,b,c (quadratic) or p,q (linear), optional fit_mape, sample_count
  request     TOML: n_x, budget_ms, n_max, k, alpha_max, predictor_mode,
              prefill_model, decode_model, [predictor_model], bucket_size,
              n_model, bucket
  manifest    TOML: trace, output_dir, policies, strategies, [models],
              [execution], [controller], [predictor], [score], [sweep]
  results     <policy>_<strategy>.summary.toml + .jobs.csv
              (# unit=ms / id,status,start_ms,finish_ms,alpha,score,overran)
  sweep       # unit=ms / axis,x,policy,strategy,completion_rate,avg_score,...
  report      x,series,value

EXIT STATUS
  0 success, 2 usage error, 3 data error, 4 infeasible decision";

#[derive(Parser)]
#[command(name = "llm-budget", version, about = "Time-budgeted LLM inference control", after_help = FORMATS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Quadratic,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Budget,
    K,
    Alpha,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an execution-time model to profiling samples.
    Fit {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict response lengths for a trace and score them against the truth.
    Predict {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        bucket_size: u32,
        #[arg(long)]
        n_model: u32,
        #[arg(long)]
        n_max: u32,
        #[arg(long, conflicts_with_all = ["oracle_sigma", "constant"])]
        lookup: Option<PathBuf>,
        /// Oracle backend noise in tokens; requires --seed.
        #[arg(long, requires = "seed", conflicts_with = "constant")]
        oracle_sigma: Option<f64>,
        #[arg(long)]
        constant: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Compute the eviction ratio for one request document.
    Decide {
        #[arg(long)]
        request: PathBuf,
    },
    /// Run every policy x strategy pair of a manifest.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to these policies (vanilla, fixed-<alpha>, budgeted).
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the manifest's execution seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep budget, pessimistic factor, or fixed alpha.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults to the manifest's [sweep] entry.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten result summaries and sweep tables into x,series,value rows.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic profiling data, planted models and a trace.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// SyntheticSpec TOML; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        trace_size: Option<usize>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
    Infeasible,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Fit { profile, kind, out } => fit(&profile, kind, &out),
        Command::Predict {
            trace,
            bucket_size,
            n_model,
            n_max,
            lookup,
            oracle_sigma,
            constant,
            seed,
            out,
            metrics_out,
        } => {
            let backend = match (lookup, oracle_sigma, constant) {
                (Some(path), None, None) => PredictorBackend::Lookup(trace_io::load_lookup(&path)?),
                (None, Some(sigma), None) => PredictorBackend::oracle(sigma, seed.unwrap_or_default()),
                (None, None, Some(bucket)) => PredictorBackend::Constant(bucket),
                _ => return Err(Failure::Usage("choose exactly one of --lookup, --oracle-sigma, --constant".into())),
            };
            let spec = BucketSpec::new(bucket_size, n_model)?;
            predict(&trace, &spec, n_max, &backend, &out, metrics_out.as_deref())
        }
        Command::Decide { request } => decide(&request),
        Command::Simulate { manifest, policies, strategies, out, seed } => {
            simulate(&manifest, &policies, &strategies, out, seed)
        }
        Command::Sweep { manifest, axis, values, jobs, out } => run_sweep(&manifest, axis, values, jobs, &out),
        Command::Report { inputs, out } => report(&inputs, out.as_deref()),
        Command::Synth { seed, out, spec, trace_size } => synth(seed, &out, spec.as_deref(), trace_size),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| Failure::Data(Error::Io { path: path.to_path_buf(), source }))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fit(profile: &Path, kind: Kind, out: &Path) -> CliResult {
    let samples = trace_io::load_profile(profile)?;
    let (model, report) = match kind {
        Kind::Quadratic => {
            let (c, r) = fit_quadratic(&samples)?;
            (ModelFile::quadratic(&c, Some(&r)), r)
        }
        Kind::Linear => {
            let (c, r) = fit_linear(&samples)?;
            (ModelFile::linear(&c, Some(&r)), r)
        }
    };
    trace_io::save_model(out, &model)?;
    println!(
        "samples = {}\nmape_percent = {}\nresidual_norm_ms = {}",
        report.sample_count, report.mape, report.residual_norm
    );
    Ok(())
}

fn predict(
    trace: &Path,
    spec: &BucketSpec,
    n_max: u32,
    backend: &PredictorBackend,
    out: &Path,
    metrics_out: Option<&Path>,
) -> CliResult {
    let jobs = trace_io::load_trace(trace)?;
    let rows = jobs
        .iter()
        .map(|job| {
            let p = predict_length(backend, job, spec, n_max)?;
            Ok(PredictionRow { prompt_id: job.id, bucket: p.bucket, n_hat: p.n_hat, n_true: job.n_true })
        })
        .collect::<llm_budget::Result<Vec<_>>>()?;
    emit(Some(out), &trace_io::render_predictions(&rows))?;
    let predicted: Vec<f64> = rows.iter().map(|r| r.n_hat as f64).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.n_true as f64).collect();
    let metrics = eval_metrics(&predicted, &truth)?;
    let text = trace_io::render_metrics(&metrics);
    if let Some(path) = metrics_out {
        emit(Some(path), &text)?;
    }
    print!("{text}");
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestDocument {
    n_x: u32,
    budget_ms: f64,
    n_max: u32,
    k: f64,
    alpha_max: f64,
    predictor_mode: PredictorMode,
    prefill_model: PathBuf,
    decode_model: PathBuf,
    #[serde(default)]
    predictor_model: Option<PathBuf>,
    bucket_size: u32,
    n_model: u32,
    /// Predicted bucket label.
    bucket: u32,
}

#[derive(Debug, Serialize)]
struct DecisionDocument {
    unit: &'static str,
    alpha_star: f64,
    feasible: bool,
    wcet_ms: f64,
    slack_ms: f64,
    t_predict_ms: f64,
    n_w: u32,
    n_hat: u32,
    bucket: u32,
    n_p: u32,
    predictor_mode: PredictorMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_raw: Option<f64>,
}

fn decide(request: &Path) -> CliResult {
    let text = std::fs::read_to_string(request).map_err(|source| Error::Io { path: request.to_path_buf(), source })?;
    let doc: RequestDocument = trace_io::parse_toml(request, &text)?;
    let dir = request.parent().unwrap_or(Path::new(""));
    let load = |p: &Path| trace_io::load_model(&dir.join(p));
    let controller = Controller {
        prefill: load(&doc.prefill_model)?.prefill()?,
        decode: load(&doc.decode_model)?.decode()?,
        predictor: match &doc.predictor_model {
            Some(p) => load(p)?.predictor()?,
            None => PredictorCoeffs::zero(),
        },
        buckets: BucketSpec::new(doc.bucket_size, doc.n_model)?,
        backend: PredictorBackend::Constant(doc.bucket),
    };
    let req = BudgetRequest {
        n_x: doc.n_x,
        budget_ms: doc.budget_ms,
        n_max: doc.n_max,
        k: doc.k,
        alpha_max: doc.alpha_max,
        predictor_mode: doc.predictor_mode,
    };
    let job =
        Job { id: 0, arrival_ms: 0.0, n_x: doc.n_x, n_true: 1, budget_ms: doc.budget_ms, task_class: String::new() };
    let trace = controller.decide(&req, &job)?;
    let d = trace.decision;
    let out = DecisionDocument {
        unit: "ms",
        alpha_star: d.alpha_star,
        feasible: d.feasible,
        wcet_ms: d.wcet_at_alpha,
        slack_ms: d.slack,
        t_predict_ms: d.t_predict,
        n_w: d.n_w,
        n_hat: trace.prediction.n_hat,
        bucket: trace.prediction.bucket,
        n_p: trace.n_p,
        predictor_mode: trace.mode,
        alpha_raw: d.alpha_raw,
    };
    print!("{}", toml::to_string(&out).expect("decision serializes"));
    if d.feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible)
    }
}

fn simulate(
    manifest_path: &Path,
    policies: &[String],
    strategies: &[String],
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult {
    let (mut manifest, dir) = Manifest::load(manifest_path)?;
    for p in policies {
        p.parse::<PolicySpec>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if !policies.is_empty() {
        manifest.policies = policies.to_vec();
    }
    if !strategies.is_empty() {
        manifest.strategies = strategies
            .iter()
            .map(|s| s.parse::<Strategy>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(seed) = seed {
        manifest.execution.seed = seed;
    }
    let experiment = manifest.experiment(&dir)?;
    let out_dir = out.unwrap_or(experiment.output_dir);
    let base = &experiment.base;
    let mut results: Vec<SimResult> = Vec::new();
    for policy in &base.policies {
        for &strategy in &base.strategies {
            let result = run_simulation(&base.trace, policy, strategy, &base.model, &base.score_model)?;
            trace_io::save_result(&out_dir, &trace_io::run_stem(&result), &result)?;
            results.push(result);
        }
    }
    let table = trace_io::render_run_table(&results);
    trace_io::write_text_file(&out_dir.join("completion.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn run_sweep(manifest_path: &Path, axis: Axis, values: Vec<f64>, jobs: usize, out: &Path) -> CliResult {
    let (manifest, dir) = Manifest::load(manifest_path)?;
    let experiment = manifest.experiment(&dir)?;
    let pick = |given: Vec<f64>, default: &[f64]| if given.is_empty() { default.to_vec() } else { given };
    let axis = match axis {
        Axis::Budget => SweepAxis::Budget(pick(values, &experiment.sweep.budget_ms)),
        Axis::K => SweepAxis::K(pick(values, &experiment.sweep.k)),
        Axis::Alpha => SweepAxis::Alpha(pick(values, &experiment.sweep.alpha)),
    };
    if axis.values().is_empty() {
        return Err(Failure::Usage(format!(
            "no values for the {} axis (use --values or the manifest's [sweep])",
            axis.name()
        )));
    }
    let rows = sweep(&axis, &experiment.base, jobs.max(1))?;
    let records: Vec<SweepRecord> = rows.iter().map(|r| SweepRecord::from_row(axis.name(), r)).collect();
    trace_io::write_text_file(out, &trace_io::render_sweep(&records))?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}

fn report(inputs: &[PathBuf], out: Option<&Path>) -> CliResult {
    let mut rows = Vec::new();
    for input in inputs {
        let text = std::fs::read_to_string(input).map_err(|source| Error::Io { path: input.clone(), source })?;
        let name = input.to_string_lossy();
        if name.ends_with(".summary.toml") {
            rows.extend(trace_io::summary_plot_rows(&trace_io::parse_summary(input, &text)?));
        } else {
            rows.extend(trace_io::sweep_plot_rows(&trace_io::parse_sweep(input, &text)?));
        }
    }
    if rows.is_empty() {
        return Err(Failure::Data(Error::EmptyInput));
    }
    emit(out, &trace_io::render_plot(&rows))
}

fn synth(seed: u64, out: &Path, spec_path: Option<&Path>, trace_size: Option<usize>) -> CliResult {
    let mut spec = match spec_path {
        Some(path) => trace_io::load_synthetic_spec(path)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = seed;
    if let Some(size) = trace_size {
        spec.trace_size = size;
    }
    for (kind, name) in [
        (ProfileKind::Prefill, "profile_prefill.csv"),
        (ProfileKind::Decode, "profile_decode.csv"),
        (ProfileKind::Predictor, "profile_predictor.csv"),
    ] {
        trace_io::save_profile(&out.join(name), &generate_profiling(&spec, kind)?)?;
    }
    trace_io::save_model(&out.join("planted_prefill.toml"), &ModelFile::quadratic(&spec.prefill, None))?;
    trace_io::save_model(&out.join("planted_decode.toml"), &ModelFile::linear(&spec.decode, None))?;
    trace_io::save_model(&out.join("planted_predictor.toml"), &ModelFile::quadratic(&spec.predictor.into(), None))?;
    trace_io::save_trace(&out.join("trace.csv"), &generate_trace(&spec)?)?;
    trace_io::save_synthetic_spec(&out.join("synthetic.toml"), &spec)?;
    println!("wrote synthetic data to {}", out.display());
    Ok(())
}
