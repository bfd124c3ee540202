//! Synthetic workloads for the two accountants: a gradient-norm model,
//! clipping and noise policies, the per-step accounting loop, and a small
//! logistic-regression DP-SGD run on tabular data.

mod io;
mod logreg;
mod model;
mod presets;
pub mod rng;

pub use io::{format_sig, read_distance_stream, write_trace_csv, DistanceRecord, TRACE_HEADER};
pub use logreg::{
    load_dataset, parse_dataset, run_logreg_dpsgd, Dataset, EpochAccuracy, LogRegConfig, LogRegOutcome,
};
pub use model::{quantile_of_norms, sample_pair_distances, GradientModel, ModelKind};
pub use presets::{preset_plan, Preset};

use serde::{Deserialize, Serialize};

use crate::accountant::{default_lambda_grid, Ledger};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::mechanisms::MechanismConfig;
use crate::pipeline::DualAccountant;
use rng::{derive_seed, derive_stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClipPolicy {
    None,
    Quantile { p: f64 },
    Absolute { c: f64 },
}

/// Reference scale that `sigma` multiplies to give the noise deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoisePolicy {
    /// Noise proportional to the clip bound.
    Clip,
    /// Noise proportional to the `p`-quantile of gradient norms.
    Quantile { p: f64 },
    /// Noise proportional to a fixed value in gradient-norm units.
    Absolute { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub model: GradientModel,
    pub steps: usize,
    pub sigma: f64,
    pub q: f64,
    #[serde(default = "one")]
    pub noise_factor: f64,
    pub clip_policy: ClipPolicy,
    pub noise_policy: NoisePolicy,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<u32>>,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

/// Concrete mechanisms implied by a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMechanisms {
    /// Clip bound applied on the Bayesian side, if any.
    pub clip: Option<f64>,
    /// Clip bound of the moments accountant; the DP mechanism always clips.
    pub dp_clip: f64,
    pub noise_reference: f64,
    pub noise_std: f64,
    pub ma: MechanismConfig,
    pub bdp: MechanismConfig,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("simulation needs at least one step"));
        }
        self.model.validate()?;
        self.estimator.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        for p in [self.clip_quantile(), self.noise_quantile()].into_iter().flatten() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(format!("quantile level must lie in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    fn clip_quantile(&self) -> Option<f64> {
        match self.clip_policy {
            ClipPolicy::Quantile { p } => Some(p),
            _ => None,
        }
    }

    fn noise_quantile(&self) -> Option<f64> {
        match self.noise_policy {
            NoisePolicy::Quantile { p } => Some(p),
            _ => None,
        }
    }

    pub fn grid(&self) -> Vec<u32> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }

    pub fn resolve(&self) -> Result<ResolvedMechanisms> {
        self.validate()?;
        let clip = match self.clip_policy {
            ClipPolicy::None => None,
            ClipPolicy::Quantile { p } => Some(quantile_of_norms(&self.model, p)?),
            ClipPolicy::Absolute { c } => Some(c),
        };
        let noise_reference = match self.noise_policy {
            NoisePolicy::Clip => clip.ok_or_else(|| {
                Error::config("noise policy 'clip' needs a clip policy other than none")
            })?,
            NoisePolicy::Quantile { p } => quantile_of_norms(&self.model, p)?,
            NoisePolicy::Absolute { scale } => scale,
        };
        // without a clip policy the DP side clips at the noise reference
        let dp_clip = clip.unwrap_or(noise_reference);
        let noise_std = self.noise_factor * self.sigma * noise_reference;
        let scaled = |c: f64| self.sigma * noise_reference / c;
        let ma = MechanismConfig::with_noise_factor(scaled(dp_clip), self.q, Some(dp_clip), self.noise_factor)?;
        let bdp = match clip {
            Some(c) => MechanismConfig::with_noise_factor(scaled(c), self.q, Some(c), self.noise_factor)?,
            None => MechanismConfig::with_noise_factor(self.sigma * noise_reference, self.q, None, self.noise_factor)?,
        };
        Ok(ResolvedMechanisms {
            clip,
            dp_clip,
            noise_reference,
            noise_std,
            ma,
            bdp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub epsilon_dp: Option<f64>,
    pub epsilon_bdp: Option<f64>,
    pub delta: f64,
    pub lambda_star_dp: Option<u32>,
    pub lambda_star_bdp: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub plan: SimulationPlan,
    pub resolved: ResolvedMechanisms,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PrivacyTrace {
    pub records: Vec<TraceRecord>,
    pub metadata: TraceMetadata,
    pub dp_ledger: Ledger,
    pub bdp_ledger: Ledger,
}

impl PrivacyTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces hold at least one step")
    }
}

/// Runs the plan step by step: fresh distances, clip, estimate, record
/// both ledgers, report ε at the plan's δ.
pub fn run_simulation(plan: &SimulationPlan) -> Result<PrivacyTrace> {
    let resolved = plan.resolve()?;
    let mut acc = DualAccountant::new(plan.grid(), Some(resolved.ma), Some(resolved.bdp), plan.estimator)?;
    let mut records = Vec::with_capacity(plan.steps);
    for step in 1..=plan.steps {
        let mut rng = derive_stream(plan.seed, Purpose::Distances, step as u64);
        let distances = sample_pair_distances(&plan.model, plan.estimator.m, &mut rng)
            .map_err(|e| e.at_step(step))?;
        acc.record(&distances).map_err(|e| e.at_step(step))?;
        let (dp, bdp) = acc.reports(plan.delta).map_err(|e| e.at_step(step))?;
        let (dp, bdp) = (dp.expect("dp enabled"), bdp.expect("bdp enabled"));
        records.push(TraceRecord {
            step,
            epsilon_dp: Some(dp.epsilon),
            epsilon_bdp: Some(bdp.epsilon),
            delta: plan.delta,
            lambda_star_dp: Some(dp.lambda_star),
            lambda_star_bdp: Some(bdp.lambda_star),
        });
    }
    let (dp_ledger, bdp_ledger) = acc.into_ledgers();
    Ok(PrivacyTrace {
        records,
        metadata: TraceMetadata {
            plan: plan.clone(),
            resolved,
            seed: plan.seed,
        },
        dp_ledger: dp_ledger.expect("dp enabled"),
        bdp_ledger: bdp_ledger.expect("bdp enabled"),
    })
}

/// One run per noise multiplier, each on its own derived seed.
pub fn sweep_sigma(plan: &SimulationPlan, sigmas: &[f64]) -> Result<Vec<(f64, PrivacyTrace)>> {
    sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let point = SimulationPlan {
                sigma,
                seed: derive_seed(plan.seed, Purpose::Sweep, i as u64),
                ..plan.clone()
            };
            run_simulation(&point).map(|t| (sigma, t))
        })
        .collect()
}
