//! Synthetic profiling data and workloads with planted parameters.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cost_model::{DecodeCoeffs, PredictorCoeffs, PrefillCoeffs, ProfilingSample};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Stream};
use crate::sim_engine::Job;

pub const DEFAULT_CONTEXT_LIMIT: u32 = 32_768;

/// Bounded integer distribution; every draw lies in `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntDist {
    Constant {
        value: u32,
    },
    Uniform {
        min: u32,
        max: u32,
    },
    LogUniform {
        min: u32,
        max: u32,
    },
    /// Log-normal around `median`, clipped to the bounds.
    LogNormal {
        median: f64,
        sigma: f64,
        min: u32,
        max: u32,
    },
}

impl IntDist {
    pub fn bounds(&self) -> (u32, u32) {
        match *self {
            IntDist::Constant { value } => (value, value),
            IntDist::Uniform { min, max } | IntDist::LogUniform { min, max } | IntDist::LogNormal { min, max, .. } => {
                (min, max)
            }
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let (min, max) = self.bounds();
        if min < 1 || min > max {
            return Err(Error::InvalidInput(format!("{what}: bounds must satisfy 1 <= min <= max")));
        }
        if let IntDist::LogNormal { median, sigma, .. } = *self {
            if !(median > 0.0) || !(sigma >= 0.0) {
                return Err(Error::InvalidInput(format!("{what}: log-normal needs median > 0 and sigma >= 0")));
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        match *self {
            IntDist::Constant { value } => value,
            IntDist::Uniform { min, max } => rng.random_range(min..=max),
            IntDist::LogUniform { min, max } => {
                let (lo, hi) = ((min as f64).ln(), (max as f64 + 1.0).ln());
                let v = rng.random_range(lo..hi).exp().floor() as u32;
                v.clamp(min, max)
            }
            IntDist::LogNormal { median, sigma, min, max } => {
                let z: f64 = StandardNormal.sample(rng);
                let v = (median * (sigma * z).exp()).round();
                v.clamp(min as f64, max as f64) as u32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BudgetDist {
    Constant {
        ms: f64,
    },
    Uniform {
        min_ms: f64,
        max_ms: f64,
    },
    /// Uniform choice among listed budgets.
    Choice {
        values_ms: Vec<f64>,
    },
}

impl BudgetDist {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            BudgetDist::Constant { ms } => *ms > 0.0,
            BudgetDist::Uniform { min_ms, max_ms } => *min_ms > 0.0 && min_ms <= max_ms,
            BudgetDist::Choice { values_ms } => !values_ms.is_empty() && values_ms.iter().all(|v| *v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("budget distribution must produce positive budgets".into()))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            BudgetDist::Constant { ms } => *ms,
            BudgetDist::Uniform { min_ms, max_ms } => {
                if min_ms == max_ms {
                    *min_ms
                } else {
                    rng.random_range(*min_ms..*max_ms)
                }
            }
            BudgetDist::Choice { values_ms } => values_ms[rng.random_range(0..values_ms.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArrivalDist {
    Periodic { period_ms: f64 },
    Poisson { mean_gap_ms: f64 },
}

/// Token counts at which profiling samples are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileGrid {
    /// `step, 2·step, …` up to the context limit.
    Linear { step: u32 },
    /// `points` geometrically spaced counts over `[1, limit]`.
    Geometric { points: usize },
}

impl ProfileGrid {
    pub fn points(&self, limit: u32) -> Vec<u32> {
        match *self {
            ProfileGrid::Linear { step } => (1..=limit / step.max(1)).map(|i| i * step.max(1)).collect(),
            ProfileGrid::Geometric { points } => profile_grid(points, limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Prefill,
    Decode,
    Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub context_limit: u32,
    pub prefill: PrefillCoeffs,
    pub decode: DecodeCoeffs,
    pub predictor: PredictorCoeffs,
    /// Relative bound ε: profiled times are `truth · (1 + u)`, `u ~ U[-ε, ε]`.
    pub profile_noise: f64,
    pub profile_grid: ProfileGrid,
    pub trace_size: usize,
    pub prompt_len: IntDist,
    pub response_len: IntDist,
    pub budget: BudgetDist,
    pub arrival: ArrivalDist,
    pub task_classes: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            prefill: PrefillCoeffs { a: 2e-6, b: 3e-4, c: 5.0 },
            decode: DecodeCoeffs { p: 0.05, q: 12.0 },
            predictor: PredictorCoeffs { a_p: 1e-7, b_p: 2e-4, c_p: 3.0 },
            profile_noise: 0.01,
            profile_grid: ProfileGrid::Linear { step: 256 },
            trace_size: 1000,
            prompt_len: IntDist::LogUniform { min: 256, max: DEFAULT_CONTEXT_LIMIT },
            response_len: IntDist::LogNormal { median: 120.0, sigma: 0.7, min: 1, max: 8192 },
            budget: BudgetDist::Choice { values_ms: vec![5000.0, 6000.0, 7000.0, 8000.0, 9000.0, 10000.0] },
            arrival: ArrivalDist::Periodic { period_ms: 10_000.0 },
            task_classes: vec!["default".into()],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.prefill.validate()?;
        self.decode.validate()?;
        self.predictor.validate()?;
        if self.context_limit < 1 {
            return Err(Error::InvalidInput("context limit must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.profile_noise) {
            return Err(Error::InvalidInput("profile noise must lie in [0, 1)".into()));
        }
        self.prompt_len.validate("prompt length")?;
        self.response_len.validate("response length")?;
        if self.prompt_len.bounds().1 > self.context_limit {
            return Err(Error::InvalidInput(format!("prompt lengths exceed the context limit {}", self.context_limit)));
        }
        self.budget.validate()?;
        let gap_ok = match self.arrival {
            ArrivalDist::Periodic { period_ms } => period_ms >= 0.0,
            ArrivalDist::Poisson { mean_gap_ms } => mean_gap_ms > 0.0,
        };
        if !gap_ok {
            return Err(Error::InvalidInput("arrival gaps must be non-negative".into()));
        }
        if self.task_classes.is_empty() {
            return Err(Error::InvalidInput("at least one task class is required".into()));
        }
        Ok(())
    }
}

/// Geometric grid of `points` token counts over `[1, limit]`, deduplicated.
pub fn profile_grid(points: usize, limit: u32) -> Vec<u32> {
    if points == 0 {
        return Vec::new();
    }
    if points == 1 {
        return vec![limit];
    }
    let ratio = (limit as f64).ln() / (points - 1) as f64;
    let mut grid: Vec<u32> = (0..points).map(|i| ((i as f64 * ratio).exp().round() as u32).clamp(1, limit)).collect();
    grid.dedup();
    grid
}

pub fn generate_profiling(spec: &SyntheticSpec, kind: ProfileKind) -> Result<Vec<ProfilingSample>> {
    spec.validate()?;
    let truth = |n: f64| match kind {
        ProfileKind::Prefill => spec.prefill.eval(n),
        ProfileKind::Decode => spec.decode.eval(n),
        ProfileKind::Predictor => spec.predictor.eval(n),
    };
    let mut rng = keyed_rng(spec.seed, Stream::Profiling, kind as u64);
    Ok(spec
        .profile_grid
        .points(spec.context_limit)
        .into_iter()
        .map(|n| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            ProfilingSample { n, t_ms: truth(n as f64) * (1.0 + spec.profile_noise * u) }
        })
        .collect())
}

pub fn generate_trace(spec: &SyntheticSpec) -> Result<Vec<Job>> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, Stream::Trace, 0);
    let mut arrival = 0.0f64;
    let mut jobs = Vec::with_capacity(spec.trace_size);
    for id in 0..spec.trace_size as u64 {
        if id > 0 {
            arrival += match spec.arrival {
                ArrivalDist::Periodic { period_ms } => period_ms,
                ArrivalDist::Poisson { mean_gap_ms } => {
                    Exp::new(1.0 / mean_gap_ms).expect("validated rate").sample(&mut rng)
                }
            };
        }
        let n_x = spec.prompt_len.sample(&mut rng);
        let n_true = spec.response_len.sample(&mut rng);
        let budget_ms = spec.budget.sample(&mut rng);
        let class = &spec.task_classes[rng.random_range(0..spec.task_classes.len())];
        jobs.push(Job { id, arrival_ms: arrival, n_x, n_true, budget_ms, task_class: class.clone() });
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = profile_grid(64, 32768);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 32768);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(profile_grid(1, 100), vec![100]);
        assert!(profile_grid(0, 100).is_empty());
        let linear = ProfileGrid::Linear { step: 256 }.points(32768);
        assert_eq!((linear.len(), linear[0], linear[127]), (128, 256, 32768));
    }

    #[test]
    fn constant_distributions_give_identical_jobs() {
        let spec = SyntheticSpec {
            trace_size: 5,
            prompt_len: IntDist::Constant { value: 100 },
            response_len: IntDist::Constant { value: 20 },
            budget: BudgetDist::Constant { ms: 500.0 },
            arrival: ArrivalDist::Periodic { period_ms: 25.0 },
            ..SyntheticSpec::default()
        };
        let jobs = generate_trace(&spec).unwrap();
        assert_eq!(jobs.len(), 5);
        for (i, j) in jobs.iter().enumerate() {
            assert_eq!(j.arrival_ms, 25.0 * i as f64);
            assert_eq!((j.n_x, j.n_true, j.budget_ms), (100, 20, 500.0));
        }
        assert!(generate_trace(&SyntheticSpec { trace_size: 0, ..spec }).unwrap().is_empty());
    }

    #[test]
    fn draws_respect_bounds() {
        let spec = SyntheticSpec {
            trace_size: 2000,
            arrival: ArrivalDist::Poisson { mean_gap_ms: 100.0 },
            task_classes: vec!["a".into(), "b".into()],
            ..SyntheticSpec::default()
        };
        let jobs = generate_trace(&spec).unwrap();
        assert!(jobs.windows(2).all(|w| w[0].arrival_ms <= w[1].arrival_ms));
        assert!(jobs.iter().all(|j| (256..=32768).contains(&j.n_x) && (1..=8192).contains(&j.n_true)));
        assert!(jobs.iter().all(|j| [5000.0, 6000.0, 7000.0, 8000.0, 9000.0, 10000.0].contains(&j.budget_ms)));
        assert!(jobs.iter().any(|j| j.task_class == "b"));
        assert_eq!(jobs, generate_trace(&spec).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let over = SyntheticSpec { prompt_len: IntDist::Uniform { min: 1, max: 40000 }, ..SyntheticSpec::default() };
        assert!(generate_trace(&over).is_err());
        let zero = SyntheticSpec { response_len: IntDist::Constant { value: 0 }, ..SyntheticSpec::default() };
        assert!(generate_trace(&zero).is_err());
        let budget = SyntheticSpec { budget: BudgetDist::Choice { values_ms: vec![] }, ..SyntheticSpec::default() };
        assert!(generate_trace(&budget).is_err());
    }
}
