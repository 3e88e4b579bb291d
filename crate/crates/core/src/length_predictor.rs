//! Bucketized response-length prediction.
//!
//! A predictor classifies a prompt into one of `⌈n_model / B⌉` fixed-width
//! buckets; bucket `n̂` covers lengths `((n̂-1)B, n̂B]` and reports `n̂B`,
//! clamped to the runtime generation limit. Backends stand in for a trained
//! classifier.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost_model::{PredictorCoeffs, PrefillCoeffs};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};
use crate::sim_engine::Job;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    bucket_size: u32,
    n_model: u32,
}

impl BucketSpec {
    pub fn new(bucket_size: u32, n_model: u32) -> Result<Self> {
        if bucket_size == 0 {
            return Err(Error::InvalidInput("bucket size must be at least 1".into()));
        }
        if n_model < bucket_size {
            return Err(Error::InvalidInput(format!(
                "model capacity {n_model} is smaller than bucket size {bucket_size}"
            )));
        }
        Ok(BucketSpec { bucket_size, n_model })
    }

    pub fn bucket_size(&self) -> u32 {
        self.bucket_size
    }

    pub fn n_model(&self) -> u32 {
        self.n_model
    }

    pub fn num_buckets(&self) -> u32 {
        self.n_model.div_ceil(self.bucket_size)
    }
}

/// 1-based bucket label `⌈n / B⌉`.
pub fn bucketize(n: u32, spec: &BucketSpec) -> Result<u32> {
    if n < 1 || n > spec.n_model {
        return Err(Error::OutOfRange { n: n.into(), n_model: spec.n_model });
    }
    Ok(n.div_ceil(spec.bucket_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPrediction {
    pub bucket: u32,
    pub n_hat: u32,
}

impl LengthPrediction {
    pub fn from_bucket(bucket: u32, spec: &BucketSpec, n_max: u32) -> Self {
        LengthPrediction { bucket, n_hat: n_max.min(bucket.saturating_mul(spec.bucket_size)) }
    }
}

/// Source of bucket labels.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorBackend {
    /// Buckets the true length after a signed perturbation drawn from a
    /// zero-mean Gaussian with `sigma` tokens, rounded to an integer.
    /// `compression_sigma` is added in quadrature when the predictor input
    /// was compressed below the prompt length.
    Oracle {
        sigma: f64,
        compression_sigma: f64,
        seed: u64,
    },
    /// Fixed label per prompt id.
    Lookup(HashMap<u64, u32>),
    Constant(u32),
}

impl PredictorBackend {
    pub fn noiseless() -> Self {
        PredictorBackend::Oracle { sigma: 0.0, compression_sigma: 0.0, seed: 0 }
    }

    pub fn oracle(sigma: f64, seed: u64) -> Self {
        PredictorBackend::Oracle { sigma, compression_sigma: 0.0, seed }
    }

    fn bucket(&self, job: &Job, compressed: bool, spec: &BucketSpec) -> Result<u32> {
        let label = match self {
            PredictorBackend::Oracle { sigma, compression_sigma, seed } => {
                let sigma = if compressed { sigma.hypot(*compression_sigma) } else { *sigma };
                let noise = if sigma > 0.0 {
                    let normal =
                        Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("oracle sigma: {e}")))?;
                    normal.sample(&mut keyed_rng(*seed, Stream::Predictor, job.id)).round()
                } else {
                    0.0
                };
                let perturbed = (job.n_true as f64 + noise).clamp(1.0, spec.n_model as f64);
                bucketize(perturbed as u32, spec)?
            }
            PredictorBackend::Lookup(table) => *table.get(&job.id).ok_or(Error::LookupMiss(job.id))?,
            PredictorBackend::Constant(bucket) => *bucket,
        };
        Ok(label.clamp(1, spec.num_buckets()))
    }
}

/// Predicts the response length of `job` from its full prompt.
pub fn predict_length(
    backend: &PredictorBackend,
    job: &Job,
    spec: &BucketSpec,
    n_max: u32,
) -> Result<LengthPrediction> {
    predict_length_with_input(backend, job, job.n_x, spec, n_max)
}

/// Like [`predict_length`], but the predictor sees only `n_p` prompt tokens.
pub fn predict_length_with_input(
    backend: &PredictorBackend,
    job: &Job,
    n_p: u32,
    spec: &BucketSpec,
    n_max: u32,
) -> Result<LengthPrediction> {
    if n_max > spec.n_model {
        return Err(Error::InvalidInput(format!("n_max {n_max} exceeds model capacity {}", spec.n_model)));
    }
    let bucket = backend.bucket(job, n_p < job.n_x, spec)?;
    Ok(LengthPrediction::from_bucket(bucket, spec, n_max))
}

/// Coefficient of determination; undefined when the truths are constant and
/// the predictions are not exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RSquared {
    Value(f64),
    NotDefined,
}

impl std::fmt::Display for RSquared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RSquared::Value(v) => write!(f, "{v}"),
            RSquared::NotDefined => f.write_str("NotDefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: RSquared,
    pub count: usize,
}

pub fn eval_metrics(predicted: &[f64], truth: &[f64]) -> Result<PredictionMetrics> {
    if predicted.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} truths", predicted.len(), truth.len())));
    }
    let count = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / count;
    let (mut abs, mut ss_res, mut ss_tot) = (0.0, 0.0, 0.0);
    for (p, t) in predicted.iter().zip(truth) {
        let err = p - t;
        abs += err.abs();
        ss_res += err * err;
        ss_tot += (t - mean) * (t - mean);
    }
    let r2 = if ss_tot > 0.0 {
        RSquared::Value(1.0 - ss_res / ss_tot)
    } else if ss_res == 0.0 {
        RSquared::Value(1.0)
    } else {
        RSquared::NotDefined
    };
    Ok(PredictionMetrics { mae: abs / count, rmse: (ss_res / count).sqrt(), r2, count: truth.len() })
}

pub fn predictor_latency(coeffs: &PredictorCoeffs, n_p: u32) -> f64 {
    coeffs.eval(n_p as f64)
}

/// Largest predictor input length whose latency fits inside the prefill of
/// an `n_x`-token prompt, capped at `n_x`.
pub fn compression_bound(pred: &PredictorCoeffs, prefill: &PrefillCoeffs, n_x: u32) -> Result<u32> {
    let window = prefill.eval(n_x as f64);
    if pred.c_p > window {
        return Err(Error::NoBudget { c_p: pred.c_p, prefill_ms: window });
    }
    let slack = window - pred.c_p;
    let root = if pred.a_p > 0.0 {
        let disc = pred.b_p * pred.b_p + 4.0 * pred.a_p * slack;
        (-pred.b_p + disc.sqrt()) / (2.0 * pred.a_p)
    } else if pred.b_p > 0.0 {
        slack / pred.b_p
    } else {
        f64::INFINITY
    };
    if !(root < n_x as f64) {
        return Ok(n_x);
    }
    let mut bound = root.floor().max(0.0) as u32;
    // The root formula can land one off after rounding; settle on the exact edge.
    while bound > 0 && pred.eval(bound as f64) > window {
        bound -= 1;
    }
    while bound < n_x && pred.eval(bound as f64 + 1.0) <= window {
        bound += 1;
    }
    Ok(bound)
}
