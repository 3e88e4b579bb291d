//! Execution-time models for the two inference phases.
//!
//! Prefill time is quadratic in the prompt length, a decode step is linear in
//! the current KV-cache length, and the decode phase is the sum of its steps.
//! All times are milliseconds.
//!
//! ```text
//! prefill(N_x)          = a N_x^2 + b N_x + c
//! kv_len(i)             = (1 - α) N_x + i - 1
//! step(i)               = p kv_len(i) + q
//! decode_phase(N)       = Σ_{i=1}^{N-1} step(i)
//!                       = (N-1) p (1-α) N_x + (N-1) q + p (N-1)(N-2)/2
//! wcet(N̂)              = prefill + decode_phase(min(⌈k N̂⌉, N_max))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples with a measured time below this are left out of the MAPE.
pub const MAPE_MIN_TIME_MS: f64 = 1e-9;

/// Quadratic prefill-phase model `a n² + b n + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillCoeffs {
    /// ms per token².
    pub a: f64,
    /// ms per token.
    pub b: f64,
    /// ms.
    pub c: f64,
}

/// Linear decode-step model `p n_kv + q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeCoeffs {
    /// ms per cached token.
    pub p: f64,
    /// ms per step.
    pub q: f64,
}

/// Quadratic latency model of the length predictor, `a_p n² + b_p n + c_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorCoeffs {
    pub a_p: f64,
    pub b_p: f64,
    pub c_p: f64,
}

/// One profiled measurement: a token count and the wall time it took.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilingSample {
    pub n: u32,
    pub t_ms: f64,
}

/// Quality of a least-squares fit over its own input set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Euclidean norm of the residual vector (ms).
    pub residual_norm: f64,
    /// Mean absolute percentage error (%).
    pub mape: f64,
    pub sample_count: usize,
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} coefficients must be finite")))
    }
}

impl PrefillCoeffs {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let coeffs = PrefillCoeffs { a, b, c };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn constant(c: f64) -> Self {
        PrefillCoeffs { a: 0.0, b: 0.0, c }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("prefill", &[self.a, self.b, self.c])?;
        if self.a < 0.0 {
            return Err(Error::InvalidModel(format!("prefill a = {} is negative", self.a)));
        }
        Ok(())
    }

    /// Evaluates the polynomial at a real-valued token count.
    pub fn eval(&self, n: f64) -> f64 {
        (self.a * n + self.b) * n + self.c
    }
}

impl DecodeCoeffs {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let coeffs = DecodeCoeffs { p, q };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("decode", &[self.p, self.q])?;
        if self.p <= 0.0 {
            return Err(Error::InvalidModel(format!("decode p = {} must be positive", self.p)));
        }
        if self.q < 0.0 {
            return Err(Error::InvalidModel(format!("decode q = {} is negative", self.q)));
        }
        Ok(())
    }

    pub fn eval(&self, n_kv: f64) -> f64 {
        self.p * n_kv + self.q
    }
}

impl PredictorCoeffs {
    pub fn new(a_p: f64, b_p: f64, c_p: f64) -> Result<Self> {
        let coeffs = PredictorCoeffs { a_p, b_p, c_p };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn zero() -> Self {
        PredictorCoeffs { a_p: 0.0, b_p: 0.0, c_p: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("predictor", &[self.a_p, self.b_p, self.c_p])?;
        if self.a_p < 0.0 || self.c_p < 0.0 {
            return Err(Error::InvalidModel("predictor a_p and c_p must be non-negative".to_string()));
        }
        Ok(())
    }

    pub fn eval(&self, n: f64) -> f64 {
        (self.a_p * n + self.b_p) * n + self.c_p
    }
}

impl From<PrefillCoeffs> for PredictorCoeffs {
    fn from(c: PrefillCoeffs) -> Self {
        PredictorCoeffs { a_p: c.a, b_p: c.b, c_p: c.c }
    }
}

impl From<PredictorCoeffs> for PrefillCoeffs {
    fn from(c: PredictorCoeffs) -> Self {
        PrefillCoeffs { a: c.a_p, b: c.b_p, c: c.c_p }
    }
}

fn distinct_counts(samples: &[ProfilingSample]) -> usize {
    let mut ns: Vec<u32> = samples.iter().map(|s| s.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.len()
}

/// Solves a small dense system in place with partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let dim = rhs.len();
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < f64::MIN_POSITIVE {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..dim {
            let factor = m[row][col] / m[col][col];
            let (upper, lower) = m.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= factor * src;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let tail: f64 = (row + 1..dim).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Ordinary least squares for `t ≈ Σ_j coef_j n^j`, `j < dofs`, via the normal
/// equations. Columns are scaled by the largest `n` so the Gram matrix stays
/// well conditioned; two rounds of iterative refinement follow.
/// Returns coefficients in ascending power order.
fn polyfit(samples: &[ProfilingSample], dofs: usize) -> Result<Vec<f64>> {
    let distinct = distinct_counts(samples);
    if distinct < dofs {
        return Err(Error::DegenerateFit { needed: dofs, distinct });
    }
    if samples.iter().any(|s| !s.t_ms.is_finite()) {
        return Err(Error::InvalidInput("profiling times must be finite".to_string()));
    }
    let scale = samples.iter().map(|s| s.n).max().unwrap_or(1).max(1) as f64;
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let x = s.n as f64 / scale;
            let mut row = Vec::with_capacity(dofs);
            let mut pow = 1.0;
            for _ in 0..dofs {
                row.push(pow);
                pow *= x;
            }
            row
        })
        .collect();

    let mut gram = vec![vec![0.0; dofs]; dofs];
    for row in &rows {
        for j in 0..dofs {
            for k in 0..dofs {
                gram[j][k] += row[j] * row[k];
            }
        }
    }
    let project = |values: &[f64]| -> Vec<f64> {
        (0..dofs).map(|j| rows.iter().zip(values).map(|(row, v)| row[j] * v).sum()).collect()
    };

    let targets: Vec<f64> = samples.iter().map(|s| s.t_ms).collect();
    let singular = || Error::DegenerateFit { needed: dofs, distinct };
    let mut coef = solve_dense(gram.clone(), project(&targets)).ok_or_else(singular)?;
    for _ in 0..2 {
        let residual: Vec<f64> = rows
            .iter()
            .zip(&targets)
            .map(|(row, t)| t - row.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>())
            .collect();
        let delta = solve_dense(gram.clone(), project(&residual)).ok_or_else(singular)?;
        for (c, d) in coef.iter_mut().zip(delta) {
            *c += d;
        }
    }

    let mut unscale = 1.0;
    for c in coef.iter_mut() {
        *c /= unscale;
        unscale *= scale;
    }
    Ok(coef)
}

fn report(samples: &[ProfilingSample], predict: impl Fn(f64) -> f64) -> FitReport {
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut counted = 0usize;
    for s in samples {
        let err = predict(s.n as f64) - s.t_ms;
        sq += err * err;
        if s.t_ms >= MAPE_MIN_TIME_MS {
            pct += (err / s.t_ms).abs();
            counted += 1;
        }
    }
    FitReport {
        residual_norm: sq.sqrt(),
        mape: if counted == 0 { 0.0 } else { 100.0 * pct / counted as f64 },
        sample_count: samples.len(),
    }
}

/// Least-squares fit of the quadratic prefill model.
pub fn fit_quadratic(samples: &[ProfilingSample]) -> Result<(PrefillCoeffs, FitReport)> {
    let coef = polyfit(samples, 3)?;
    let coeffs = PrefillCoeffs { a: coef[2], b: coef[1], c: coef[0] };
    Ok((coeffs, report(samples, |n| coeffs.eval(n))))
}

/// Least-squares fit of the linear decode-step model. Rejects profiles whose
/// fitted slope is not positive.
pub fn fit_linear(samples: &[ProfilingSample]) -> Result<(DecodeCoeffs, FitReport)> {
    let coef = polyfit(samples, 2)?;
    let coeffs = DecodeCoeffs { p: coef[1], q: coef[0] };
    // Exactly-constant profiles leave a rounding-level slope behind.
    let tolerance = 1e-12 * coef[0].abs().max(1.0);
    if coeffs.p <= tolerance {
        return Err(Error::NonPositiveSlope { slope: coeffs.p });
    }
    Ok((coeffs, report(samples, |n| coeffs.eval(n))))
}

pub fn estimate_prefill(coeffs: &PrefillCoeffs, n_x: u32) -> f64 {
    coeffs.eval(n_x as f64)
}

/// KV-cache length at decoding step `i` (1-based) after evicting a fraction
/// `alpha` of the prompt cache. Real-valued; nothing is rounded.
pub fn kv_len(n_x: u32, alpha: f64, i: u32) -> f64 {
    debug_assert!(i >= 1);
    (1.0 - alpha) * n_x as f64 + (i as f64 - 1.0)
}

pub fn estimate_decode_step(coeffs: &DecodeCoeffs, n_kv: f64) -> f64 {
    coeffs.eval(n_kv)
}

/// Total time of the `n - 1` decoding steps that follow prefill, in closed form.
/// A response of length `n` takes one prefill token plus `n - 1` steps.
pub fn estimate_decode_phase(coeffs: &DecodeCoeffs, n_x: u32, alpha: f64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let steps = (n - 1) as f64;
    steps * coeffs.p * (1.0 - alpha) * n_x as f64 + steps * coeffs.q + coeffs.p * steps * (steps - 1.0) / 2.0
}

pub fn estimate_e2e(prefill: &PrefillCoeffs, decode: &DecodeCoeffs, n_x: u32, alpha: f64, n_hat: u32) -> f64 {
    estimate_prefill(prefill, n_x) + estimate_decode_phase(decode, n_x, alpha, n_hat)
}

/// `min(⌈k n_hat⌉, n_max)`. Products within 1e-9 relative of an integer are
/// treated as that integer so that e.g. `1.1 * 100` yields 110, not 111.
pub fn pessimistic_length(n_hat: u32, k: f64, n_max: u32) -> u32 {
    let scaled = k * n_hat as f64;
    let nearest = scaled.round();
    let ceil = if (scaled - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { scaled.ceil() };
    if ceil >= n_max as f64 {
        n_max
    } else {
        ceil.max(0.0) as u32
    }
}

/// Worst-case execution time estimate at the pessimistic response length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wcet {
    pub time_ms: f64,
    pub n_w: u32,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_wcet(
    prefill: &PrefillCoeffs,
    decode: &DecodeCoeffs,
    n_x: u32,
    alpha: f64,
    n_hat: u32,
    k: f64,
    n_max: u32,
) -> Wcet {
    let n_w = pessimistic_length(n_hat, k, n_max);
    Wcet { time_ms: estimate_e2e(prefill, decode, n_x, alpha, n_w), n_w }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREFILL: PrefillCoeffs = PrefillCoeffs { a: 2e-6, b: 3e-4, c: 5.0 };
    const UNIT: DecodeCoeffs = DecodeCoeffs { p: 1.0, q: 2.0 };

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn stepwise(coeffs: &DecodeCoeffs, n_x: u32, alpha: f64, n: u32) -> f64 {
        (1..n).map(|i| estimate_decode_step(coeffs, kv_len(n_x, alpha, i))).sum()
    }

    fn planted(ns: impl IntoIterator<Item = u32>, f: impl Fn(f64) -> f64) -> Vec<ProfilingSample> {
        ns.into_iter().map(|n| ProfilingSample { n, t_ms: f(n as f64) }).collect()
    }

    #[test]
    fn quadratic_fit_recovers_planted_coefficients() {
        let samples = planted((8..=15).map(|e| 1u32 << e), |n| PREFILL.eval(n));
        let (fit, rep) = fit_quadratic(&samples).unwrap();
        assert!(rel(fit.a, PREFILL.a) < 1e-9, "{fit:?}");
        assert!(rel(fit.b, PREFILL.b) < 1e-9, "{fit:?}");
        assert!(rel(fit.c, PREFILL.c) < 1e-9, "{fit:?}");
        assert!(rep.mape < 1e-9);
        assert_eq!(rep.sample_count, 8);
    }

    #[test]
    fn quadratic_fit_needs_three_distinct_counts() {
        let two = planted([10, 20], |n| PREFILL.eval(n));
        assert!(matches!(fit_quadratic(&two), Err(Error::DegenerateFit { distinct: 2, .. })));
        let repeated = planted([10, 10, 20, 20], |n| PREFILL.eval(n));
        assert!(matches!(fit_quadratic(&repeated), Err(Error::DegenerateFit { .. })));
    }

    #[test]
    fn linear_fit_recovers_and_rejects() {
        let samples = planted((0..20).map(|i| i * 1000 + 1), |n| 0.05 * n + 12.0);
        let (fit, rep) = fit_linear(&samples).unwrap();
        assert!(rel(fit.p, 0.05) < 1e-9);
        assert!(rel(fit.q, 12.0) < 1e-9);
        assert!(rep.mape < 1e-9);

        let flat_n = planted([100, 100, 100], |_| 3.0);
        assert!(matches!(fit_linear(&flat_n), Err(Error::DegenerateFit { .. })));

        let constant = planted([1, 50, 100, 400], |_| 12.0);
        assert!(matches!(fit_linear(&constant), Err(Error::NonPositiveSlope { .. })));
    }

    #[test]
    fn mape_skips_zero_times() {
        let samples = vec![
            ProfilingSample { n: 0, t_ms: 0.0 },
            ProfilingSample { n: 1, t_ms: 1.0 },
            ProfilingSample { n: 2, t_ms: 2.0 },
        ];
        let rep = report(&samples, |n| n * 1.1);
        assert!((rep.mape - 10.0).abs() < 1e-9);
    }

    #[test]
    fn prefill_examples() {
        assert!((estimate_prefill(&PREFILL, 1000) - 7.3).abs() < 1e-12);
        assert_eq!(estimate_prefill(&PREFILL, 0), 5.0);
        let constant = PrefillCoeffs::constant(4.5);
        for n in [0, 1, 1000, 32768] {
            assert_eq!(estimate_prefill(&constant, n), 4.5);
        }
    }

    #[test]
    fn kv_len_examples() {
        assert_eq!(kv_len(10, 0.0, 1), 10.0);
        assert_eq!(kv_len(100, 0.25, 5), 79.0);
        assert_eq!(kv_len(10, 1.0, 1), 0.0);
    }

    #[test]
    fn decode_step_examples() {
        assert_eq!(estimate_decode_step(&UNIT, 10.0), 12.0);
        assert_eq!(estimate_decode_step(&UNIT, 0.0), 2.0);
        let d = DecodeCoeffs { p: 0.05, q: 12.0 };
        assert!((estimate_decode_step(&d, 1000.0) - 62.0).abs() < 1e-12);
    }

    #[test]
    fn decode_phase_examples() {
        assert_eq!(estimate_decode_phase(&UNIT, 10, 0.0, 4), 39.0);
        assert_eq!(stepwise(&UNIT, 10, 0.0, 4), 39.0);
        assert_eq!(estimate_decode_phase(&UNIT, 10, 0.7, 1), 0.0);
        assert!((estimate_decode_phase(&UNIT, 10, 0.3, 4) - 30.0).abs() < 1e-12);
        assert!((stepwise(&UNIT, 10, 0.3, 4) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn e2e_examples() {
        assert!((estimate_e2e(&PREFILL, &UNIT, 1000, 0.0, 1) - 7.3).abs() < 1e-12);
        // prefill 7.3 at n_x = 1000 plus the n_x = 10 decode example
        let prefill_only = PrefillCoeffs::constant(7.3);
        assert!((estimate_e2e(&prefill_only, &UNIT, 10, 0.0, 4) - 46.3).abs() < 1e-12);
        assert_eq!(estimate_e2e(&PREFILL, &UNIT, 1000, 0.9, 1), estimate_prefill(&PREFILL, 1000));

        let d = DecodeCoeffs { p: 0.05, q: 12.0 };
        let (n_x, n_hat, alpha) = (3000u32, 250u32, 0.37);
        let diff = estimate_e2e(&PREFILL, &d, n_x, 0.0, n_hat) - estimate_e2e(&PREFILL, &d, n_x, alpha, n_hat);
        let expected = d.p * (n_hat - 1) as f64 * alpha * n_x as f64;
        assert!(rel(diff, expected) < 1e-9);
    }

    #[test]
    fn wcet_examples() {
        assert_eq!(pessimistic_length(100, 5.0, 8192), 500);
        assert_eq!(pessimistic_length(100, 5.0, 300), 300);
        assert_eq!(pessimistic_length(100, 1.1, 8192), 110);
        assert_eq!(pessimistic_length(3, 1.5, 8192), 5);
        let w = estimate_wcet(&PREFILL, &UNIT, 50, 0.2, 40, 1.0, 8192);
        assert_eq!(w.n_w, 40);
        assert_eq!(w.time_ms, estimate_e2e(&PREFILL, &UNIT, 50, 0.2, 40));
    }

    #[test]
    fn coefficient_validation() {
        assert!(PrefillCoeffs::new(-1.0, 0.0, 0.0).is_err());
        assert!(DecodeCoeffs::new(0.0, 1.0).is_err());
        assert!(DecodeCoeffs::new(1.0, -1.0).is_err());
        assert!(PredictorCoeffs::new(0.0, 0.0, -1.0).is_err());
        assert!(PredictorCoeffs::new(1e-6, -1e-4, 1.0).is_ok());
        assert!(PrefillCoeffs::new(f64::NAN, 0.0, 0.0).is_err());
    }
}
