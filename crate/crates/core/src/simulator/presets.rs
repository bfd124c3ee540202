use std::fmt;
use std::str::FromStr;

use super::{ClipPolicy, GradientModel, NoisePolicy, SimulationPlan};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;

/// Canned plans for the synthetic experiments.
///
/// All share MNIST-like sampling (`q = 64/60000`), a Weibull(0.5, 1) norm
/// model with 100 distances per step, `γ = 1e-15`, `δ = 1e-5` and noise
/// standard deviation `2σ` times the noise reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Clip at the 0.01-quantile of norms, noise relative to the clip.
    Fig1a,
    /// Clip at the median norm.
    Fig1b,
    /// Clip at the 0.99-quantile.
    Fig1c,
    /// Noise at the 0.05-quantile; DP clips at that level, BDP does not clip.
    Fig2a,
    Fig2b,
    Fig2c,
    /// ε over 10⁴ steps with noise at the 0.25-quantile, BDP unclipped.
    Fig3,
    /// Every distance equals the clip bound `C`; `σ = 1`, noise scale 1.
    Fig6,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Fig1a,
        Preset::Fig1b,
        Preset::Fig1c,
        Preset::Fig2a,
        Preset::Fig2b,
        Preset::Fig2c,
        Preset::Fig3,
        Preset::Fig6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1a => "fig1a",
            Preset::Fig1b => "fig1b",
            Preset::Fig1c => "fig1c",
            Preset::Fig2a => "fig2a",
            Preset::Fig2b => "fig2b",
            Preset::Fig2c => "fig2c",
            Preset::Fig3 => "fig3",
            Preset::Fig6 => "fig6",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|p| p.name()).collect()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown preset {s:?}; known presets: {}", Self::names().join(", "))))
    }
}

/// Plan for `preset`; `fig6_clip` sets `C` for [`Preset::Fig6`] and is
/// ignored otherwise.
pub fn preset_plan(preset: Preset, seed: u64, fig6_clip: f64) -> SimulationPlan {
    let weibull = GradientModel::weibull(0.5, 1.0);
    let base = SimulationPlan {
        model: weibull,
        steps: 1000,
        sigma: 1.0,
        q: 64.0 / 60000.0,
        noise_factor: 2.0,
        clip_policy: ClipPolicy::None,
        noise_policy: NoisePolicy::Clip,
        estimator: EstimatorConfig::default(),
        delta: 1e-5,
        lambda_grid: None,
        seed,
    };
    let clipped = |p: f64| SimulationPlan {
        clip_policy: ClipPolicy::Quantile { p },
        noise_policy: NoisePolicy::Clip,
        ..base.clone()
    };
    let unclipped = |p: f64| SimulationPlan {
        clip_policy: ClipPolicy::None,
        noise_policy: NoisePolicy::Quantile { p },
        ..base.clone()
    };
    match preset {
        Preset::Fig1a => clipped(0.01),
        Preset::Fig1b => clipped(0.5),
        Preset::Fig1c => clipped(0.99),
        Preset::Fig2a => unclipped(0.05),
        Preset::Fig2b => unclipped(0.5),
        Preset::Fig2c => unclipped(0.95),
        Preset::Fig3 => SimulationPlan {
            steps: 10_000,
            ..unclipped(0.25)
        },
        Preset::Fig6 => SimulationPlan {
            model: GradientModel::constant(fig6_clip),
            steps: 10_000,
            clip_policy: ClipPolicy::Absolute { c: fig6_clip },
            noise_policy: NoisePolicy::Absolute { scale: 1.0 },
            ..base.clone()
        },
    }
}
