//! Logistic regression trained with DP-SGD on a small tabular dataset.
//!
//! The noisy batch gradient is `(Σ_i clip(g_i) + N(0, s²I)) / B` for a
//! fixed batch size `B`, so removing example `i` moves it by exactly
//! `‖clip(g_i)‖ / B`. Those leave-one-out distances feed the Bayesian
//! ledger and their bound `C / B` feeds the moments accountant.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{derive_stream, Purpose};
use super::TraceRecord;
use crate::accountant::{default_lambda_grid, Ledger};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::mechanisms::MechanismConfig;
use crate::pipeline::DualAccountant;

pub const MIN_ROWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }
}

/// Parses a headed CSV with numeric features and a 0/1 column `label`.
/// Rows are numbered as lines of the file, so the header is line 1.
pub fn parse_dataset<R: Read>(reader: R, label: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label)
        .ok_or_else(|| Error::data(format!("label column {label:?} not found in header")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut row = Vec::with_capacity(feature_names.len());
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} ({:?}): {field:?} is not a number", col + 1, &headers[col]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {} ({:?}): value is not finite", col + 1, &headers[col]),
                });
            }
            if col == label_idx {
                if value != 0.0 && value != 1.0 {
                    return Err(Error::data(format!("line {line}: label {field:?} is not 0 or 1")));
                }
                labels.push(value);
            } else {
                row.push(value);
            }
        }
        features.push(row);
    }
    if labels.len() < MIN_ROWS {
        return Err(Error::data(format!("dataset needs at least {MIN_ROWS} rows, got {}", labels.len())));
    }
    Ok(Dataset {
        feature_names,
        features,
        labels,
    })
}

pub fn load_dataset(path: &Path, label: &str) -> Result<Dataset> {
    parse_dataset(std::fs::File::open(path)?, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-example gradient clip; required whenever `sigma` is set.
    pub clip: Option<f64>,
    /// Noise multiplier; `None` trains without noise or accounting.
    pub sigma: Option<f64>,
    pub noise_factor: f64,
    pub estimator: EstimatorConfig,
    pub delta: f64,
    pub lambda_grid: Option<Vec<u32>>,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 40,
            learning_rate: 0.5,
            clip: Some(1.0),
            sigma: Some(1.0),
            noise_factor: 1.0,
            estimator: EstimatorConfig::default(),
            delta: 1e-5,
            lambda_grid: None,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: usize,
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone)]
pub struct LogRegOutcome {
    pub records: Vec<TraceRecord>,
    pub history: Vec<EpochAccuracy>,
    /// Weights on standardized features; the last entry is the bias.
    pub weights: Vec<f64>,
    pub dp_ledger: Option<Ledger>,
    pub bdp_ledger: Option<Ledger>,
}

impl LogRegOutcome {
    pub fn final_accuracy(&self) -> EpochAccuracy {
        *self.history.last().expect("at least one epoch")
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Standardized features with a trailing constant 1.
fn design(data: &Dataset, rows: &[usize], mean: &[f64], sd: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            let mut x: Vec<f64> = data.features[r]
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(v, (m, s))| (v - m) / s)
                .collect();
            x.push(1.0);
            x
        })
        .collect()
}

fn accuracy(w: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| (dot(w, x) >= 0.0) == (**y == 1.0))
        .count();
    hits as f64 / xs.len() as f64
}

/// Per-example logistic-loss gradient at `w`, clipped to `clip`.
pub(crate) fn clipped_gradient(w: &[f64], x: &[f64], y: f64, clip: Option<f64>) -> Vec<f64> {
    let r = sigmoid(dot(w, x)) - y;
    let mut g: Vec<f64> = x.iter().map(|v| r * v).collect();
    if let Some(c) = clip {
        let n = norm(&g);
        if n > c {
            let s = c / n;
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    g
}

impl LogRegConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction must lie in (0, 1]"));
        }
        let n_train = (rows as f64 * self.train_fraction).round() as usize;
        if self.batch_size < 2 || self.batch_size > n_train {
            return Err(Error::config(format!(
                "batch size must lie in [2, {n_train}], got {}",
                self.batch_size
            )));
        }
        if self.sigma.is_some() {
            if self.clip.is_none() {
                return Err(Error::config("noisy training needs a clip bound"));
            }
            self.estimator.validate()?;
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return Err(Error::config("delta must lie in (0, 1)"));
            }
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("clip must be positive"));
            }
        }
        Ok(())
    }
}

/// Trains on a seeded split of `data` and accounts every step with both
/// ledgers. The sampling rate charged is `B / N_train`; batches are a
/// fresh shuffle per epoch.
pub fn run_logreg_dpsgd(data: &Dataset, cfg: &LogRegConfig) -> Result<LogRegOutcome> {
    cfg.validate(data.len())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut derive_stream(cfg.seed, Purpose::Shuffle, 0));
    let n_train = (data.len() as f64 * cfg.train_fraction).round() as usize;
    let (train_rows, test_rows) = order.split_at(n_train);

    let dim = data.dim();
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for &r in train_rows {
        for (m, v) in mean.iter_mut().zip(&data.features[r]) {
            *m += v / n_train as f64;
        }
    }
    for &r in train_rows {
        for ((s, v), m) in sd.iter_mut().zip(&data.features[r]).zip(&mean) {
            *s += (v - m).powi(2) / n_train as f64;
        }
    }
    sd.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

    let x_train = design(data, train_rows, &mean, &sd);
    let y_train: Vec<f64> = train_rows.iter().map(|&r| data.labels[r]).collect();
    let x_test = design(data, test_rows, &mean, &sd);
    let y_test: Vec<f64> = test_rows.iter().map(|&r| data.labels[r]).collect();

    let b = cfg.batch_size;
    let q = b as f64 / n_train as f64;
    let mut acc = match cfg.sigma {
        Some(sigma) => {
            let c = cfg.clip.expect("validated");
            let mech = MechanismConfig::with_noise_factor(sigma, q, Some(c / b as f64), cfg.noise_factor)?;
            let grid = cfg.lambda_grid.clone().unwrap_or_else(default_lambda_grid);
            Some(DualAccountant::new(grid, Some(mech), Some(mech), cfg.estimator)?)
        }
        None => None,
    };
    let noise_sd = cfg.sigma.map(|s| cfg.noise_factor * s * cfg.clip.expect("validated"));
    let m = cfg.estimator.m.min(b);

    let mut w = vec![0.0; dim + 1];
    let mut noise_rng = derive_stream(cfg.seed, Purpose::Noise, 0);
    let mut idx: Vec<usize> = (0..n_train).collect();
    let mut records = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut derive_stream(cfg.seed, Purpose::Subsampling, epoch as u64));
        for batch in idx.chunks_exact(b) {
            step += 1;
            let mut sum = vec![0.0; dim + 1];
            let mut distances = Vec::with_capacity(m);
            for (k, &i) in batch.iter().enumerate() {
                let g = clipped_gradient(&w, &x_train[i], y_train[i], cfg.clip);
                if k < m {
                    distances.push(norm(&g) / b as f64);
                }
                sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
            if let Some(s) = noise_sd {
                for v in sum.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    *v += s * z;
                }
            }
            for (wj, gj) in w.iter_mut().zip(&sum) {
                *wj -= cfg.learning_rate * gj / b as f64;
            }
            if let Some(acc) = acc.as_mut() {
                acc.record(&distances).map_err(|e| e.at_step(step))?;
                let (dp, bdp) = acc.reports(cfg.delta).map_err(|e| e.at_step(step))?;
                records.push(TraceRecord {
                    step,
                    epsilon_dp: dp.map(|r| r.epsilon),
                    epsilon_bdp: bdp.map(|r| r.epsilon),
                    delta: cfg.delta,
                    lambda_star_dp: dp.map(|r| r.lambda_star),
                    lambda_star_bdp: bdp.map(|r| r.lambda_star),
                });
            }
        }
        history.push(EpochAccuracy {
            epoch,
            train: accuracy(&w, &x_train, &y_train),
            test: accuracy(&w, &x_test, &y_test),
        });
    }
    let (dp_ledger, bdp_ledger) = acc.map(|a| a.into_ledgers()).unwrap_or((None, None));
    Ok(LogRegOutcome {
        records,
        history,
        weights: w,
        dp_ledger,
        bdp_ledger,
    })
}
