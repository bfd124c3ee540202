use rand::Rng;
use rand_distr::{Distribution, LogNormal, Weibull};
use serde::{Deserialize, Serialize};

use super::rng::{derive_stream, Purpose};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `scale · Weibull(shape)`; shape < 1 gives heavy tails.
    Weibull,
    /// `scale · exp(shape · Z)`, i.e. median `scale` and log-deviation `shape`.
    Lognormal,
    /// Every draw equals `scale`.
    Constant,
    /// Resamples a recorded set of norms.
    Empirical,
}

/// Distribution of per-example gradient norms, which under add/remove
/// adjacency of a summed gradient are also the neighbour distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientModel {
    pub kind: ModelKind,
    #[serde(default = "default_shape")]
    pub shape: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
}

fn default_shape() -> f64 {
    0.5
}

fn default_scale() -> f64 {
    1.0
}

fn default_calibration_draws() -> usize {
    1_000_000
}

impl GradientModel {
    pub fn weibull(shape: f64, scale: f64) -> Self {
        Self::parametric(ModelKind::Weibull, shape, scale)
    }

    pub fn lognormal(log_sd: f64, median: f64) -> Self {
        Self::parametric(ModelKind::Lognormal, log_sd, median)
    }

    pub fn constant(value: f64) -> Self {
        Self::parametric(ModelKind::Constant, 1.0, value)
    }

    pub fn empirical(samples: Vec<f64>) -> Self {
        Self {
            samples,
            ..Self::parametric(ModelKind::Empirical, 1.0, 1.0)
        }
    }

    fn parametric(kind: ModelKind, shape: f64, scale: f64) -> Self {
        Self {
            kind,
            shape,
            scale,
            calibration_draws: default_calibration_draws(),
            seed: 0,
            samples: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0) || !(self.scale > 0.0) {
            return Err(Error::config(format!(
                "gradient model needs shape > 0 and scale > 0, got shape={}, scale={}",
                self.shape, self.scale
            )));
        }
        if self.kind == ModelKind::Empirical {
            if self.samples.is_empty() {
                return Err(Error::config("empirical gradient model has no samples"));
            }
            if self.samples.iter().any(|s| !(*s >= 0.0) || s.is_infinite()) {
                return Err(Error::config("empirical gradient norms must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// One norm draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ModelKind::Weibull => Weibull::new(self.scale, self.shape)
                .expect("validated weibull parameters")
                .sample(rng),
            ModelKind::Lognormal => LogNormal::new(self.scale.ln(), self.shape)
                .expect("validated lognormal parameters")
                .sample(rng),
            ModelKind::Constant => self.scale,
            ModelKind::Empirical => self.samples[rng.random_range(0..self.samples.len())],
        }
    }
}

/// `m` neighbour distances drawn from `model`.
pub fn sample_pair_distances<R: Rng + ?Sized>(model: &GradientModel, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::config(format!("need at least 2 distances per step, got {m}")));
    }
    model.validate()?;
    Ok((0..m).map(|_| model.draw(rng)).collect())
}

/// `p`-quantile of the norm distribution: closed form for Weibull and
/// Constant, nearest rank for recorded samples, and nearest rank over
/// `calibration_draws` seeded draws otherwise.
pub fn quantile_of_norms(model: &GradientModel, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!("quantile level must lie in (0, 1), got {p}")));
    }
    model.validate()?;
    match model.kind {
        ModelKind::Weibull => Ok(model.scale * (-(-p).ln_1p()).powf(1.0 / model.shape)),
        ModelKind::Constant => Ok(model.scale),
        ModelKind::Empirical => Ok(nearest_rank(model.samples.clone(), p)),
        ModelKind::Lognormal => {
            if model.calibration_draws == 0 {
                return Err(Error::config("calibration_draws must be positive"));
            }
            let mut rng = derive_stream(model.seed, Purpose::Calibration, 0);
            let draws: Vec<f64> = (0..model.calibration_draws).map(|_| model.draw(&mut rng)).collect();
            Ok(nearest_rank(draws, p))
        }
    }
}

/// Smallest sample with at least `p·n` samples at or below it.
fn nearest_rank(mut samples: Vec<f64>, p: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let rank = (p * samples.len() as f64).ceil() as usize;
    samples[rank.clamp(1, samples.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_model() {
        let mut rng = derive_stream(1, Purpose::Distances, 0);
        let d = sample_pair_distances(&GradientModel::constant(0.7), 5, &mut rng).unwrap();
        assert_eq!(d, vec![0.7; 5]);
        assert_eq!(quantile_of_norms(&GradientModel::constant(0.7), 0.99).unwrap(), 0.7);
    }

    #[test]
    fn weibull_mean_matches_gamma_function() {
        // E = scale · Γ(1 + 1/shape) = Γ(3) = 2
        let model = GradientModel::weibull(0.5, 1.0);
        let mut rng = derive_stream(42, Purpose::Distances, 0);
        let n = 1_000_000;
        let mean = sample_pair_distances(&model, n, &mut rng).unwrap().iter().sum::<f64>() / n as f64;
        assert!((mean / 2.0 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn weibull_quantile_closed_form() {
        let q = quantile_of_norms(&GradientModel::weibull(0.5, 1.0), 0.5).unwrap();
        assert!((q - 2f64.ln().powi(2)).abs() < 1e-15);
        assert!((q - 0.48045).abs() < 1e-5);
    }

    #[test]
    fn empirical_nearest_rank() {
        let m = GradientModel::empirical(vec![5.0, 1.0, 4.0, 2.0, 3.0]);
        assert_eq!(quantile_of_norms(&m, 0.2).unwrap(), 1.0);
        assert_eq!(quantile_of_norms(&m, 0.21).unwrap(), 2.0);
        assert_eq!(quantile_of_norms(&m, 0.5).unwrap(), 3.0);
        assert_eq!(quantile_of_norms(&m, 0.99).unwrap(), 5.0);
    }

    #[test]
    fn lognormal_calibrated_median() {
        let mut m = GradientModel::lognormal(0.5, 2.0);
        m.calibration_draws = 200_000;
        let med = quantile_of_norms(&m, 0.5).unwrap();
        assert!((med / 2.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn determinism_per_stream() {
        let model = GradientModel::weibull(0.5, 1.0);
        let a = sample_pair_distances(&model, 8, &mut derive_stream(9, Purpose::Distances, 11)).unwrap();
        let b = sample_pair_distances(&model, 8, &mut derive_stream(9, Purpose::Distances, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation() {
        let mut rng = derive_stream(1, Purpose::Distances, 0);
        assert!(sample_pair_distances(&GradientModel::weibull(0.5, 1.0), 1, &mut rng).is_err());
        assert!(GradientModel::weibull(0.0, 1.0).validate().is_err());
        assert!(GradientModel::empirical(vec![]).validate().is_err());
        assert!(quantile_of_norms(&GradientModel::weibull(0.5, 1.0), 1.0).is_err());
    }
}
