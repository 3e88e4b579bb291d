//! Deterministic single-server replay of inference workloads.
//!
//! Jobs are served FIFO; each starts at `max(arrival, previous finish)` and must
//! finish by `start + budget`. Policies choose the eviction ratio; overrun
//! strategies decide what happens on a miss:
//!
//! * `Kill` cuts the job at its deadline and frees the server there.
//! * `SkipNext` lets the job finish. Every queued job whose own budget window
//!   (`arrival + budget`) has closed by the time the overrunning job finishes
//!   is skipped without consuming service time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget_controller::{BudgetRequest, Controller, DecisionTrace, PredictorMode, FEASIBILITY_TOL_MS};
use crate::cost_model::{
    estimate_decode_phase, estimate_decode_step, estimate_prefill, kv_len, DecodeCoeffs, PredictorCoeffs, PrefillCoeffs,
};
use crate::error::{Error, Result};
use crate::length_predictor::predictor_latency;
use crate::rng::{keyed_rng, Stream};

/// A latency within this margin of the budget still meets the deadline.
pub const DEADLINE_TOL_MS: f64 = FEASIBILITY_TOL_MS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub arrival_ms: f64,
    pub n_x: u32,
    /// Ground-truth response length.
    pub n_true: u32,
    pub budget_ms: f64,
    pub task_class: String,
}

/// Ground-truth execution behaviour of the served model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionModel {
    pub prefill: PrefillCoeffs,
    pub decode: DecodeCoeffs,
    pub predictor: PredictorCoeffs,
    /// Log-normal σ applied per phase; 0 reproduces the analytic model.
    pub sigma_exec: f64,
    pub seed: u64,
    /// Generation stops after this many tokens.
    pub n_max: u32,
}

/// Per-phase multiplicative noise of one job. Drawn from `(seed, job id)`
/// only, so it is the same whatever α or policy the job runs under.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PhaseNoise {
    prefill: f64,
    decode: f64,
    predict: f64,
}

impl ExecutionModel {
    fn noise(&self, job_id: u64) -> PhaseNoise {
        if self.sigma_exec == 0.0 {
            return PhaseNoise { prefill: 1.0, decode: 1.0, predict: 1.0 };
        }
        let mut rng = keyed_rng(self.seed, Stream::Execution, job_id);
        let mut draw = || {
            let z: f64 = StandardNormal.sample(&mut rng);
            (self.sigma_exec * z).exp()
        };
        PhaseNoise { prefill: draw(), decode: draw(), predict: draw() }
    }

    fn generated_len(&self, job: &Job) -> u32 {
        job.n_true.min(self.n_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActualTimes {
    pub prefill_ms: f64,
    pub decode_ms: f64,
    pub steps_ms: Vec<f64>,
}

/// "True" prefill and decode times of `job` at eviction ratio `alpha`, for a
/// response of `min(n_true, n_max)` tokens.
pub fn actual_times(model: &ExecutionModel, job: &Job, alpha: f64) -> ActualTimes {
    let noise = model.noise(job.id);
    let n_gen = model.generated_len(job);
    let steps_ms =
        (1..n_gen).map(|i| noise.decode * estimate_decode_step(&model.decode, kv_len(job.n_x, alpha, i))).collect();
    ActualTimes {
        prefill_ms: noise.prefill * estimate_prefill(&model.prefill, job.n_x),
        decode_ms: noise.decode * estimate_decode_phase(&model.decode, job.n_x, alpha, n_gen),
        steps_ms,
    }
}

/// Non-increasing piecewise-linear map from α to a score multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct ScoreCurve {
    points: Vec<(f64, f64)>,
}

impl ScoreCurve {
    /// Breakpoints `(α, multiplier)`, strictly increasing in α, starting at
    /// `(0, 1)`. Beyond the last breakpoint the multiplier stays flat.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("score curve: {msg}")));
        match points.first() {
            Some(&(a, m)) if a == 0.0 && m == 1.0 => {}
            _ => return bad("must start at (0, 1)"),
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return bad("alpha breakpoints must increase");
            }
            if w[1].1 > w[0].1 {
                return bad("multiplier must be non-increasing");
            }
        }
        if points.iter().any(|&(a, m)| !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&m)) {
            return bad("values must lie in [0, 1]");
        }
        Ok(ScoreCurve { points })
    }

    pub fn multiplier(&self, alpha: f64) -> f64 {
        let pts = &self.points;
        if alpha <= 0.0 {
            return 1.0;
        }
        let idx = pts.partition_point(|&(a, _)| a <= alpha);
        if idx == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (a0, m0) = pts[idx - 1];
        let (a1, m1) = pts[idx];
        m0 + (m1 - m0) * (alpha - a0) / (a1 - a0)
    }
}

impl Default for ScoreCurve {
    /// Flat up to α = 0.5, then linear down to 0.4 at α = 0.95.
    fn default() -> Self {
        ScoreCurve { points: vec![(0.0, 1.0), (0.5, 1.0), (0.95, 0.4)] }
    }
}

impl TryFrom<Vec<(f64, f64)>> for ScoreCurve {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        ScoreCurve::new(points)
    }
}

impl From<ScoreCurve> for Vec<(f64, f64)> {
    fn from(curve: ScoreCurve) -> Self {
        curve.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub base_score: f64,
    #[serde(default)]
    pub default_curve: ScoreCurve,
    #[serde(default)]
    pub curves: BTreeMap<String, ScoreCurve>,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel { base_score: 1.0, default_curve: ScoreCurve::default(), curves: BTreeMap::new() }
    }
}

impl ScoreModel {
    pub fn score(&self, task_class: &str, alpha: f64) -> f64 {
        let curve = self.curves.get(task_class).unwrap_or(&self.default_curve);
        self.base_score * curve.multiplier(alpha)
    }
}

/// Settings of the budget-driven policy; the controller sees fitted models,
/// which may differ from the execution ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedPolicy {
    pub controller: Controller,
    pub k: f64,
    pub alpha_max: f64,
    pub predictor_mode: PredictorMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// No eviction.
    Vanilla,
    FixedAlpha(f64),
    /// Per-job α from the budget controller.
    Budgeted(Box<BudgetedPolicy>),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Vanilla => "vanilla".into(),
            Policy::FixedAlpha(a) => format!("fixed-{a}"),
            Policy::Budgeted(_) => "budgeted".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Kill,
    SkipNext,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Kill => "kill",
            Strategy::SkipNext => "skip-next",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kill" => Ok(Strategy::Kill),
            "skip-next" => Ok(Strategy::SkipNext),
            other => Err(Error::InvalidInput(format!("unknown overrun strategy '{other}'"))),
        }
    }
}

/// What a job would do if it ran uninterrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRun {
    pub alpha_used: f64,
    pub latency_ms: f64,
    /// Score if the job meets its deadline.
    pub score: f64,
    pub decision: Option<DecisionTrace>,
}

pub fn run_policy_on_job(
    policy: &Policy,
    job: &Job,
    model: &ExecutionModel,
    score_model: &ScoreModel,
) -> Result<JobRun> {
    let noise = model.noise(job.id);
    let n_gen = model.generated_len(job);
    let prefill_ms = noise.prefill * estimate_prefill(&model.prefill, job.n_x);
    let (alpha, predict_ms, decision) = match policy {
        Policy::Vanilla => (0.0, 0.0, None),
        Policy::FixedAlpha(alpha) => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::InvalidInput(format!("fixed alpha {alpha} outside [0, 1]")));
            }
            (*alpha, 0.0, None)
        }
        Policy::Budgeted(cfg) => {
            let req = BudgetRequest {
                n_x: job.n_x,
                budget_ms: job.budget_ms,
                n_max: model.n_max,
                k: cfg.k,
                alpha_max: cfg.alpha_max,
                predictor_mode: cfg.predictor_mode,
            };
            let trace = cfg.controller.decide(&req, job)?;
            let predict = noise.predict * predictor_latency(&model.predictor, trace.n_p);
            let charged = match trace.mode {
                PredictorMode::Serial => predict,
                PredictorMode::Parallel => (predict - prefill_ms).max(0.0),
            };
            (trace.decision.alpha_star, charged, Some(trace))
        }
    };
    let decode_ms = noise.decode * estimate_decode_phase(&model.decode, job.n_x, alpha, n_gen);
    Ok(JobRun {
        alpha_used: alpha,
        latency_ms: prefill_ms + predict_ms + decode_ms,
        score: score_model.score(&job.task_class, alpha),
        decision,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Completed,
    Killed,
    Skipped,
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobStatus::Completed => "completed",
            JobStatus::Killed => "killed",
            JobStatus::Skipped => "skipped",
        })
    }
}

impl FromStr for JobStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completed" => Ok(JobStatus::Completed),
            "killed" => Ok(JobStatus::Killed),
            "skipped" => Ok(JobStatus::Skipped),
            other => Err(Error::InvalidInput(format!("unknown job status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub id: u64,
    pub status: JobStatus,
    pub start_ms: f64,
    pub finish_ms: f64,
    /// `None` for skipped jobs.
    pub alpha_used: Option<f64>,
    pub score: f64,
    pub overran: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: String,
    pub strategy: Strategy,
    pub total: usize,
    pub completed: usize,
    pub killed: usize,
    pub skipped: usize,
    /// Completed jobs that finished after their deadline (skip-next only).
    pub completed_late: usize,
    /// `None` for an empty trace.
    pub completion_rate: Option<f64>,
    /// Mean score over all jobs, zeros included; `None` for an empty trace.
    pub avg_score: Option<f64>,
    pub outcomes: Vec<JobOutcome>,
}

impl SimResult {
    fn from_outcomes(policy: String, strategy: Strategy, outcomes: Vec<JobOutcome>) -> Self {
        let count = |status| outcomes.iter().filter(|o| o.status == status).count();
        let total = outcomes.len();
        let completed = count(JobStatus::Completed);
        let completed_late = outcomes.iter().filter(|o| o.status == JobStatus::Completed && o.overran).count();
        let (completion_rate, avg_score) = if total == 0 {
            (None, None)
        } else {
            let score_sum: f64 = outcomes.iter().map(|o| o.score).sum();
            (Some(completed as f64 / total as f64), Some(score_sum / total as f64))
        };
        SimResult {
            policy,
            strategy,
            total,
            completed,
            killed: count(JobStatus::Killed),
            skipped: count(JobStatus::Skipped),
            completed_late,
            completion_rate,
            avg_score,
            outcomes,
        }
    }
}

pub fn check_trace(trace: &[Job]) -> Result<()> {
    for pair in trace.windows(2) {
        if pair[1].arrival_ms < pair[0].arrival_ms {
            return Err(Error::NonMonotoneTrace {
                id: pair[1].id,
                arrival_ms: pair[1].arrival_ms,
                previous_ms: pair[0].arrival_ms,
            });
        }
    }
    Ok(())
}

/// Replays `trace` on one server. Single-threaded and fully deterministic.
pub fn run_simulation(
    trace: &[Job],
    policy: &Policy,
    strategy: Strategy,
    model: &ExecutionModel,
    score_model: &ScoreModel,
) -> Result<SimResult> {
    check_trace(trace)?;
    let mut outcomes = Vec::with_capacity(trace.len());
    let mut server_free = f64::NEG_INFINITY;
    // Finish time of the job currently overrunning under skip-next.
    let mut overrun_until = f64::NEG_INFINITY;

    for job in trace {
        if strategy == Strategy::SkipNext
            && job.arrival_ms < overrun_until
            && job.arrival_ms + job.budget_ms <= overrun_until
        {
            outcomes.push(JobOutcome {
                id: job.id,
                status: JobStatus::Skipped,
                start_ms: job.arrival_ms,
                finish_ms: job.arrival_ms,
                alpha_used: None,
                score: 0.0,
                overran: false,
            });
            continue;
        }

        let run = run_policy_on_job(policy, job, model, score_model)?;
        let start = job.arrival_ms.max(server_free);
        let overran = run.latency_ms > job.budget_ms + DEADLINE_TOL_MS;
        let outcome = match (overran, strategy) {
            (true, Strategy::Kill) => JobOutcome {
                id: job.id,
                status: JobStatus::Killed,
                start_ms: start,
                finish_ms: start + job.budget_ms,
                alpha_used: Some(run.alpha_used),
                score: 0.0,
                overran: true,
            },
            _ => JobOutcome {
                id: job.id,
                status: JobStatus::Completed,
                start_ms: start,
                finish_ms: start + run.latency_ms,
                alpha_used: Some(run.alpha_used),
                score: run.score,
                overran,
            },
        };
        server_free = outcome.finish_ms;
        if overran && strategy == Strategy::SkipNext {
            overrun_until = outcome.finish_ms;
        }
        outcomes.push(outcome);
    }
    Ok(SimResult::from_outcomes(policy.label(), strategy, outcomes))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Overrides every job's budget (ms).
    Budget(Vec<f64>),
    /// Pessimistic factor of budgeted policies.
    K(Vec<f64>),
    /// Runs `FixedAlpha(x)` in place of the configured policies.
    Alpha(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Budget(_) => "budget_ms",
            SweepAxis::K(_) => "k",
            SweepAxis::Alpha(_) => "alpha",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Budget(v) | SweepAxis::K(v) | SweepAxis::Alpha(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepBase {
    pub trace: Vec<Job>,
    pub policies: Vec<Policy>,
    pub strategies: Vec<Strategy>,
    pub model: ExecutionModel,
    pub score_model: ScoreModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub result: SimResult,
}

/// One simulation per (value, policy, strategy), all on the same trace and
/// seeds. Runs share nothing, so `threads > 1` spreads them over a pool;
/// row order does not depend on the thread count.
pub fn sweep(axis: &SweepAxis, base: &SweepBase, threads: usize) -> Result<Vec<SweepRow>> {
    if axis.values().is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let mut runs: Vec<(f64, Policy, Strategy)> = Vec::new();
    for &x in axis.values() {
        let policies: Vec<Policy> = match axis {
            SweepAxis::Alpha(_) => vec![Policy::FixedAlpha(x)],
            SweepAxis::K(_) => base
                .policies
                .iter()
                .map(|p| match p {
                    Policy::Budgeted(cfg) => Policy::Budgeted(Box::new(BudgetedPolicy { k: x, ..(**cfg).clone() })),
                    other => other.clone(),
                })
                .collect(),
            SweepAxis::Budget(_) => base.policies.clone(),
        };
        for policy in policies {
            for &strategy in &base.strategies {
                runs.push((x, policy.clone(), strategy));
            }
        }
    }

    let run_one = |(x, policy, strategy): &(f64, Policy, Strategy)| -> Result<SweepRow> {
        let result = match axis {
            SweepAxis::Budget(_) => {
                let trace: Vec<Job> = base.trace.iter().map(|j| Job { budget_ms: *x, ..j.clone() }).collect();
                run_simulation(&trace, policy, *strategy, &base.model, &base.score_model)?
            }
            _ => run_simulation(&base.trace, policy, *strategy, &base.model, &base.score_model)?,
        };
        Ok(SweepRow { x: *x, result })
    };

    if threads <= 1 {
        return runs.iter().map(run_one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| runs.par_iter().map(run_one).collect())
}
