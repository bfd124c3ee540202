//! High-confidence overestimates of the privacy cost from finite samples.
//!
//! The continuous estimator treats the `m` per-sample moments `v_i` as draws
//! with unknown mean and variance and returns an upper credible bound on
//! their mean from the Student-t posterior. The binary estimator is the
//! Beta-posterior quantile for a Bernoulli mean under a flat prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{beta_inv_pair, student_t_upper_quantile, ToleranceConfig};

pub const DEFAULT_GAMMA: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Samples drawn per step.
    pub m: usize,
    /// Probability that the estimate undershoots the true cost.
    pub gamma: f64,
    /// Cap the estimate at the data-independent cost when a clip bound exists.
    pub clamp_to_ma: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            m: 100,
            gamma: DEFAULT_GAMMA,
            clamp_to_ma: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config(format!("estimator needs m >= 2 samples, got {}", self.m)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Per-sample log-moments `ln max(e^{λ D_fwd}, e^{λ D_rev})` at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSampleBatch {
    pub values: Vec<f64>,
    pub step: usize,
    pub lambda: u32,
}

impl MomentSampleBatch {
    pub fn new(values: Vec<f64>, step: usize, lambda: u32) -> Self {
        Self { values, step, lambda }
    }
}

/// Estimated `ĉ_t(λ)`:
///
/// ```text
/// ĉ = ln[ M + t_{1-γ}(m-1) / sqrt(m-1) · S ]
/// M = mean(v),  S = sqrt(mean(v²) - M²)
/// ```
///
/// The sample count `m` is the batch length. Values are shifted by their
/// maximum before exponentiating, so moments beyond `e^709` are fine.
/// With `cfg.clamp_to_ma` and `ma_cost` present the result is
/// `min(ĉ, ma_cost)`.
pub fn estimate_privacy_cost(
    batch: &MomentSampleBatch,
    cfg: &EstimatorConfig,
    ma_cost: Option<f64>,
) -> Result<f64> {
    let m = batch.values.len();
    if m < 2 {
        return Err(Error::config(format!("estimator needs m >= 2 samples, got {m}")));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::config(format!("gamma must lie in (0, 1), got {}", cfg.gamma)));
    }
    if let Some(bad) = batch.values.iter().find(|v| !(**v >= 0.0) || v.is_infinite()) {
        return Err(Error::data(format!(
            "log-moment samples must be finite and >= 0, got {bad} (step {}, λ={})",
            batch.step, batch.lambda
        )));
    }
    let quantile = student_t_upper_quantile(cfg.gamma, (m - 1) as f64)?;
    let estimate = bound_from_log_values(&batch.values, quantile);
    Ok(match ma_cost {
        Some(cap) if cfg.clamp_to_ma => estimate.min(cap),
        _ => estimate,
    })
}

/// `ln[M + quantile / sqrt(m-1) · S]` on the log-values.
pub(crate) fn bound_from_log_values(values: &[f64], quantile: f64) -> f64 {
    let m = values.len() as f64;
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (sum, sum_sq) = values.iter().fold((0.0, 0.0), |(s, s2), &v| {
        let r = (v - top).exp();
        (s + r, s2 + r * r)
    });
    let mean = sum / m;
    // rounding can push the discriminant slightly negative
    let spread = (sum_sq / m - mean * mean).max(0.0).sqrt();
    let bound = mean + quantile / (m - 1.0).sqrt() * spread;
    if bound <= 0.0 {
        // only reachable with gamma > 1/2; the true cost is never negative
        return 0.0;
    }
    (top + bound.ln()).max(0.0)
}

/// Upper credible bound on a Bernoulli mean: the `1 - γ` quantile of the
/// flat-prior posterior `Beta(n_ones + 1, n_zeros + 1)`.
pub fn bernoulli_mean_upper(n_ones: u64, n_zeros: u64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::domain(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let a = n_ones as f64 + 1.0;
    let b = n_zeros as f64 + 1.0;
    // upper quantile: I_x(a, b) = 1 - γ  <=>  I_{1-x}(b, a) = γ
    let (_, x) = beta_inv_pair(gamma, b, a, &ToleranceConfig::default())?;
    Ok(x)
}

/// Total failure mass `β + T·γ`, flagged when it no longer bounds anything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBudget {
    pub delta: f64,
    pub vacuous: bool,
}

pub fn delta_budget(beta: f64, steps: u64, gamma: f64) -> Result<DeltaBudget> {
    if !(beta >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::domain(format!(
            "delta budget needs beta >= 0 and gamma >= 0, got beta={beta}, gamma={gamma}"
        )));
    }
    let delta = beta + steps as f64 * gamma;
    Ok(DeltaBudget {
        delta,
        vacuous: delta >= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(gamma: f64) -> EstimatorConfig {
        EstimatorConfig {
            m: 4,
            gamma,
            clamp_to_ma: true,
        }
    }

    #[test]
    fn zero_divergence_batch() {
        let b = MomentSampleBatch::new(vec![0.0; 10], 0, 3);
        assert_eq!(estimate_privacy_cost(&b, &cfg(1e-15), None).unwrap(), 0.0);
    }

    #[test]
    fn four_sample_example() {
        let values: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
        let b = MomentSampleBatch::new(values, 0, 1);
        let c = estimate_privacy_cost(&b, &cfg(0.05), None).unwrap();
        // M = 2.5, S = sqrt(1.25), t(0.95, 3) = 2.353363435
        let want = (2.5 + 2.353_363_435 / 3f64.sqrt() * 1.25f64.sqrt()).ln();
        assert!((c - want).abs() < 1e-8, "{c} vs {want}");
        assert!((c - 1.3911).abs() < 1e-4);
    }

    #[test]
    fn median_gamma_gives_log_mean() {
        let values: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
        let b = MomentSampleBatch::new(values, 0, 1);
        let c = estimate_privacy_cost(&b, &cfg(0.5), None).unwrap();
        assert!((c - 2.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clamps_to_ma_cost() {
        let b = MomentSampleBatch::new(vec![0.5, 3.0, 1.0], 0, 2);
        let free = estimate_privacy_cost(&b, &cfg(0.01), None).unwrap();
        let capped = estimate_privacy_cost(&b, &cfg(0.01), Some(1.0)).unwrap();
        assert!(free > 1.0);
        assert_eq!(capped, 1.0);
        let off = EstimatorConfig {
            clamp_to_ma: false,
            ..cfg(0.01)
        };
        assert_eq!(estimate_privacy_cost(&b, &off, Some(1.0)).unwrap(), free);
    }

    #[test]
    fn handles_values_beyond_exp_range() {
        let b = MomentSampleBatch::new(vec![5000.0, 5000.0, 5000.0], 0, 2);
        let c = estimate_privacy_cost(&b, &cfg(1e-15), None).unwrap();
        assert!((c - 5000.0).abs() < 1e-12);
        let b = MomentSampleBatch::new(vec![5000.0, 4999.0, 10.0], 0, 2);
        assert!(estimate_privacy_cost(&b, &cfg(1e-15), None).unwrap().is_finite());
    }

    #[test]
    fn rejects_bad_batches() {
        let one = MomentSampleBatch::new(vec![0.1], 0, 1);
        assert!(matches!(estimate_privacy_cost(&one, &cfg(0.1), None), Err(Error::Config(_))));
        let neg = MomentSampleBatch::new(vec![0.1, -0.5], 0, 1);
        assert!(matches!(estimate_privacy_cost(&neg, &cfg(0.1), None), Err(Error::Data(_))));
        let ok = MomentSampleBatch::new(vec![0.1, 0.5], 0, 1);
        assert!(estimate_privacy_cost(&ok, &cfg(0.0), None).is_err());
        assert!(EstimatorConfig { m: 1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn bernoulli_worked_example() {
        let gamma = 0.99f64.powi(101);
        assert!((gamma - 0.36).abs() < 0.01);
        let rho = bernoulli_mean_upper(0, 100, gamma).unwrap();
        assert!((rho - 0.01).abs() < 1e-9, "{rho}");
        assert_eq!(bernoulli_mean_upper(0, 100, 0.0).unwrap(), 1.0);
        assert!((bernoulli_mean_upper(0, 0, 0.7).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_posterior_coverage() {
        // Pr[ρ <= ρ̂ | data] = 1 - γ under Beta(n1 + 1, n0 + 1)
        let rho = bernoulli_mean_upper(3, 40, 0.05).unwrap();
        let cover = crate::numerics::reg_incomplete_beta(4.0, 41.0, rho).unwrap();
        assert!((cover - 0.95).abs() < 1e-9);
    }

    #[test]
    fn delta_budget_examples() {
        assert_eq!(delta_budget(1e-5, 0, 0.3).unwrap().delta, 1e-5);
        let d = delta_budget(1e-5, 10_000, 1e-15).unwrap();
        assert!((d.delta - (1e-5 + 1e-11)).abs() < 1e-20);
        assert!(!d.vacuous);
        let d = delta_budget(0.0, 1, 0.36).unwrap();
        assert_eq!(d.delta, 0.36);
        assert!(delta_budget(0.5, 2, 0.3).unwrap().vacuous);
        assert!(delta_budget(-1.0, 2, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_gamma_and_permutation_invariant(
            mut values in prop::collection::vec(0.0f64..5.0, 2..30),
        ) {
            let mut prev = f64::INFINITY;
            for &g in &[1e-15, 1e-9, 1e-4, 0.01, 0.1, 0.3, 0.5] {
                let b = MomentSampleBatch::new(values.clone(), 0, 1);
                let c = estimate_privacy_cost(&b, &cfg(g), None).unwrap();
                prop_assert!(c <= prev + 1e-12);
                prev = c;
            }
            // at γ = 1/2 the bound equals ln M; smaller γ stays above it
            let mean = values.iter().map(|v| v.exp()).sum::<f64>() / values.len() as f64;
            prop_assert!(prev >= mean.ln() - 1e-12 && prev >= 0.0);

            let b = MomentSampleBatch::new(values.clone(), 0, 1);
            let base = estimate_privacy_cost(&b, &cfg(0.01), None).unwrap();
            values.reverse();
            values.rotate_left(1);
            let b = MomentSampleBatch::new(values, 0, 1);
            let perm = estimate_privacy_cost(&b, &cfg(0.01), None).unwrap();
            prop_assert!((base - perm).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
