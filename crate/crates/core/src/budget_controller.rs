//! Minimal KV-cache eviction ratio for a per-request time budget.
//!
//! The controller solves
//!
//! ```text
//! min α  s.t.  t_predict + wcet(α, n_w) ≤ T,   0 ≤ α ≤ α_max
//! ```
//!
//! in closed form. Expanding the decode-phase sum gives the binding root
//!
//! ```text
//! α_raw = 1 − (T − prefill − t_predict) / (p n_x (n_w − 1))
//!           + q / (p n_x) + (n_w − 2) / (2 n_x)
//! ```
//!
//! which is then clamped to `[0, α_max]`.

use serde::{Deserialize, Serialize};

use crate::cost_model::{
    estimate_e2e, estimate_prefill, pessimistic_length, DecodeCoeffs, PredictorCoeffs, PrefillCoeffs,
};
use crate::error::{Error, Result};
use crate::length_predictor::{
    compression_bound, predict_length_with_input, predictor_latency, BucketSpec, LengthPrediction, PredictorBackend,
};
use crate::sim_engine::Job;

/// Slack below zero but above `-FEASIBILITY_TOL_MS` still counts as feasible.
pub const FEASIBILITY_TOL_MS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorMode {
    /// Predictor runs alongside prefill; only its overhang costs time.
    Parallel,
    /// Predictor runs before prefill.
    Serial,
}

impl std::str::FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(PredictorMode::Parallel),
            "serial" => Ok(PredictorMode::Serial),
            other => Err(Error::InvalidInput(format!("unknown predictor mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRequest {
    pub n_x: u32,
    pub budget_ms: f64,
    pub n_max: u32,
    pub k: f64,
    pub alpha_max: f64,
    pub predictor_mode: PredictorMode,
}

impl BudgetRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_ms > 0.0) || !self.budget_ms.is_finite() {
            return Err(Error::InvalidInput(format!("budget {} ms must be positive", self.budget_ms)));
        }
        if !(self.k >= 1.0) || !self.k.is_finite() {
            return Err(Error::InvalidInput(format!("pessimistic factor {} must be >= 1", self.k)));
        }
        if !(0.0..1.0).contains(&self.alpha_max) {
            return Err(Error::InvalidInput(format!("alpha_max {} must lie in [0, 1)", self.alpha_max)));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidInput("n_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionDecision {
    pub alpha_star: f64,
    pub feasible: bool,
    /// Estimated WCET at `alpha_star` (ms).
    pub wcet_at_alpha: f64,
    /// `T − t_predict − wcet_at_alpha` (ms).
    pub slack: f64,
    pub n_w: u32,
    /// Effective predictor time charged against the budget (ms).
    pub t_predict: f64,
    /// Unclamped root; `None` when the decode phase is empty.
    pub alpha_raw: Option<f64>,
}

/// Context of a decision made through [`decide`]: what the predictor saw and
/// how its latency was accounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub prediction: LengthPrediction,
    pub n_p: u32,
    /// Accounting mode actually used; parallel requests fall back to serial
    /// when the predictor cannot fit inside prefill at any input length.
    pub mode: PredictorMode,
    pub decision: EvictionDecision,
}

/// Predictor time that is not hidden behind prefill.
pub fn effective_predict_time(req: &BudgetRequest, pred: &PredictorCoeffs, prefill: &PrefillCoeffs, n_p: u32) -> f64 {
    let predict = predictor_latency(pred, n_p);
    match req.predictor_mode {
        PredictorMode::Serial => predict,
        PredictorMode::Parallel => (predict - estimate_prefill(prefill, req.n_x)).max(0.0),
    }
}

/// Unclamped α at which `t_predict + wcet(α)` equals the budget; requires
/// `n_w ≥ 2`.
pub fn alpha_root(budget_ms: f64, prefill_ms: f64, t_predict: f64, decode: &DecodeCoeffs, n_x: u32, n_w: u32) -> f64 {
    let n_x = n_x as f64;
    let n_w = n_w as f64;
    let p_nx = decode.p * n_x;
    1.0 - (budget_ms - prefill_ms - t_predict) / (p_nx * (n_w - 1.0)) + decode.q / p_nx + (n_w - 2.0) / (2.0 * n_x)
}

fn decision_at(
    alpha: f64,
    alpha_raw: Option<f64>,
    req: &BudgetRequest,
    prefill: &PrefillCoeffs,
    decode: &DecodeCoeffs,
    n_w: u32,
    t_predict: f64,
) -> EvictionDecision {
    let wcet = estimate_e2e(prefill, decode, req.n_x, alpha, n_w);
    let slack = req.budget_ms - t_predict - wcet;
    EvictionDecision {
        alpha_star: alpha,
        feasible: slack >= -FEASIBILITY_TOL_MS,
        wcet_at_alpha: wcet,
        slack,
        n_w,
        t_predict,
        alpha_raw,
    }
}

/// Smallest eviction ratio in `[0, alpha_max]` whose WCET fits the budget.
/// When even `alpha_max` overruns, returns `alpha_max` with `feasible = false`.
pub fn solve_alpha(
    req: &BudgetRequest,
    prefill: &PrefillCoeffs,
    decode: &DecodeCoeffs,
    n_hat: u32,
    t_predict: f64,
) -> Result<EvictionDecision> {
    req.validate()?;
    if !(decode.p > 0.0) {
        return Err(Error::InvalidModel(format!("decode p = {} must be positive", decode.p)));
    }
    if req.n_x < 1 {
        return Err(Error::InvalidInput("prompt length must be at least 1".into()));
    }
    let n_w = pessimistic_length(n_hat, req.k, req.n_max);
    if n_w <= 1 {
        return Ok(decision_at(0.0, None, req, prefill, decode, n_w, t_predict));
    }
    let prefill_ms = estimate_prefill(prefill, req.n_x);
    let raw = alpha_root(req.budget_ms, prefill_ms, t_predict, decode, req.n_x, n_w);
    let alpha = raw.max(0.0).min(req.alpha_max);
    Ok(decision_at(alpha, Some(raw), req, prefill, decode, n_w, t_predict))
}

/// Models and predictor the controller consults.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub prefill: PrefillCoeffs,
    pub decode: DecodeCoeffs,
    pub predictor: PredictorCoeffs,
    pub buckets: BucketSpec,
    pub backend: PredictorBackend,
}

impl Controller {
    /// Predicts the response length, accounts predictor time, and solves for α.
    /// In parallel mode the predictor input is compressed to the largest length
    /// that hides behind prefill.
    pub fn decide(&self, req: &BudgetRequest, job: &Job) -> Result<DecisionTrace> {
        req.validate()?;
        let (n_p, mode) = match req.predictor_mode {
            PredictorMode::Serial => (req.n_x, PredictorMode::Serial),
            PredictorMode::Parallel => match compression_bound(&self.predictor, &self.prefill, req.n_x) {
                Ok(bound) => (bound, PredictorMode::Parallel),
                Err(Error::NoBudget { .. }) => (req.n_x, PredictorMode::Serial),
                Err(e) => return Err(e),
            },
        };
        let prediction = predict_length_with_input(&self.backend, job, n_p, &self.buckets, req.n_max)?;
        let accounted = BudgetRequest { predictor_mode: mode, ..*req };
        let t_predict = effective_predict_time(&accounted, &self.predictor, &self.prefill, n_p);
        let decision = solve_alpha(req, &self.prefill, &self.decode, prediction.n_hat, t_predict)?;
        Ok(DecisionTrace { prediction, n_p, mode, decision })
    }
}

/// Free-function form of [`Controller::decide`].
#[allow(clippy::too_many_arguments)]
pub fn decide(
    req: &BudgetRequest,
    prefill: &PrefillCoeffs,
    decode: &DecodeCoeffs,
    pred: &PredictorCoeffs,
    buckets: &BucketSpec,
    backend: &PredictorBackend,
    job: &Job,
) -> Result<DecisionTrace> {
    Controller { prefill: *prefill, decode: *decode, predictor: *pred, buckets: *buckets, backend: backend.clone() }
        .decide(req, job)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: DecodeCoeffs = DecodeCoeffs { p: 1.0, q: 2.0 };

    fn request(budget_ms: f64) -> BudgetRequest {
        BudgetRequest {
            n_x: 10,
            budget_ms,
            n_max: 8192,
            k: 1.0,
            alpha_max: 0.95,
            predictor_mode: PredictorMode::Parallel,
        }
    }

    #[test]
    fn effective_predict_time_examples() {
        let window = PrefillCoeffs::constant(7.3);
        let req = request(50.0);
        let fast = PredictorCoeffs { a_p: 0.0, b_p: 0.0, c_p: 2.1 };
        let slow = PredictorCoeffs { a_p: 0.0, b_p: 0.0, c_p: 9.0 };
        assert_eq!(effective_predict_time(&req, &fast, &window, 100), 0.0);
        assert!((effective_predict_time(&req, &slow, &window, 100) - 1.7).abs() < 1e-12);
        let serial = BudgetRequest { predictor_mode: PredictorMode::Serial, ..req };
        assert_eq!(effective_predict_time(&serial, &fast, &window, 100), 2.1);
    }

    #[test]
    fn solve_alpha_examples() {
        let prefill = PrefillCoeffs::constant(20.0);
        let d = solve_alpha(&request(50.0), &prefill, &UNIT, 4, 0.0).unwrap();
        assert!((d.alpha_star - 0.3).abs() < 1e-12, "{d:?}");
        assert!(d.feasible);
        assert_eq!(d.n_w, 4);
        assert!(d.slack.abs() < 1e-9);

        let d = solve_alpha(&request(100.0), &prefill, &UNIT, 4, 0.0).unwrap();
        assert_eq!(d.alpha_star, 0.0);
        assert!(d.feasible);
        assert!(d.alpha_raw.unwrap() < 0.0);

        let d = solve_alpha(&request(25.0), &prefill, &UNIT, 4, 0.0).unwrap();
        assert_eq!(d.alpha_star, 0.95);
        assert!(!d.feasible);
        assert!((d.wcet_at_alpha - 30.5).abs() < 1e-12);
    }

    #[test]
    fn single_token_response_skips_decode() {
        let prefill = PrefillCoeffs::constant(20.0);
        let d = solve_alpha(&request(21.0), &prefill, &UNIT, 1, 0.5).unwrap();
        assert_eq!((d.alpha_star, d.feasible, d.n_w), (0.0, true, 1));
        let d = solve_alpha(&request(20.0), &prefill, &UNIT, 1, 0.5).unwrap();
        assert!(!d.feasible);
    }

    #[test]
    fn rejects_non_positive_slope() {
        let flat = DecodeCoeffs { p: 0.0, q: 2.0 };
        let err = solve_alpha(&request(50.0), &PrefillCoeffs::constant(1.0), &flat, 4, 0.0);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn request_validation() {
        assert!(request(0.0).validate().is_err());
        assert!(BudgetRequest { k: 0.5, ..request(1.0) }.validate().is_err());
        assert!(BudgetRequest { alpha_max: 1.0, ..request(1.0) }.validate().is_err());
        assert!(BudgetRequest { n_max: 0, ..request(1.0) }.validate().is_err());
    }

    #[test]
    fn parallel_falls_back_to_serial_without_budget() {
        let job = Job { id: 1, arrival_ms: 0.0, n_x: 10, n_true: 4, budget_ms: 50.0, task_class: "default".into() };
        let prefill = PrefillCoeffs::constant(20.0);
        let slow = PredictorCoeffs { a_p: 0.0, b_p: 0.0, c_p: 25.0 };
        let buckets = BucketSpec::new(1, 8192).unwrap();
        let trace =
            decide(&request(100.0), &prefill, &UNIT, &slow, &buckets, &PredictorBackend::noiseless(), &job).unwrap();
        assert_eq!(trace.mode, PredictorMode::Serial);
        assert_eq!(trace.n_p, 10);
        assert_eq!(trace.decision.t_predict, 25.0);
        // 100 - 20 - 25 = 55 ms left for decode; 30(1-α) + 9 ≤ 55 holds at α = 0
        assert_eq!(trace.decision.alpha_star, 0.0);
        assert!(trace.decision.feasible);
    }
}
