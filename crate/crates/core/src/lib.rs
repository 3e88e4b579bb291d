//! Time-budgeted LLM inference control.
//!
//! * [`cost_model`] fits and evaluates prefill/decode execution-time models and
//!   the worst-case execution time at a pessimistic response length.
//! * [`length_predictor`] turns bucket labels into predicted lengths and
//!   bounds the predictor input so it hides behind prefill.
//! * [`budget_controller`] picks the smallest KV-cache eviction ratio whose
//!   WCET fits a per-request budget.
//! * [`sim_engine`] replays workloads on a single server under fixed or
//!   budget-driven eviction and Kill / Skip-Next overrun handling.
//! * [`trace_io`] reads and writes every file format and synthesizes data.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget_controller;
pub mod cost_model;
pub mod error;
pub mod length_predictor;
mod rng;
pub mod sim_engine;
pub mod trace_io;

pub use budget_controller::{
    alpha_root, decide, effective_predict_time, solve_alpha, BudgetRequest, Controller, DecisionTrace,
    EvictionDecision, PredictorMode,
};
pub use cost_model::{
    estimate_decode_phase, estimate_decode_step, estimate_e2e, estimate_prefill, estimate_wcet, fit_linear,
    fit_quadratic, kv_len, pessimistic_length, DecodeCoeffs, FitReport, PredictorCoeffs, PrefillCoeffs,
    ProfilingSample, Wcet,
};
pub use error::{Error, Result};
pub use length_predictor::{
    bucketize, compression_bound, eval_metrics, predict_length, predictor_latency, BucketSpec, LengthPrediction,
    PredictionMetrics, PredictorBackend, RSquared,
};
pub use sim_engine::{
    actual_times, run_policy_on_job, run_simulation, sweep, BudgetedPolicy, ExecutionModel, Job, JobOutcome, JobStatus,
    Policy, ScoreCurve, ScoreModel, SimResult, Strategy, SweepAxis, SweepBase, SweepRow,
};
