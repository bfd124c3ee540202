//! The privacy ledger: per-order accumulation of log-moments, conversion to
//! `(ε, δ)` pairs, and small composition helpers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const LEDGER_VERSION: u64 = 1;

/// `1..=64` followed by sparse large orders up to 512.
pub fn default_lambda_grid() -> Vec<u32> {
    (1..=64).chain([96, 128, 192, 256, 384, 512]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Moments accountant: data-independent worst-case costs.
    Ma,
    /// Bayesian accountant: estimated costs, with estimator failure in δ.
    Bdp,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ma => "ma",
            Mode::Bdp => "bdp",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ma" => Ok(Mode::Ma),
            "bdp" => Ok(Mode::Bdp),
            other => Err(Error::config(format!("unknown accountant mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda_star: u32,
    pub attack_success: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    lambda_grid: Vec<u32>,
    cum_cost: Vec<f64>,
    // low-order parts of the running sums, so long ledgers do not drift
    residual: Vec<f64>,
    steps: u64,
    gamma: f64,
    mode: Mode,
}

impl Ledger {
    pub fn new(mode: Mode, lambda_grid: Vec<u32>, gamma: f64) -> Result<Self> {
        if lambda_grid.is_empty() {
            return Err(Error::config("lambda grid must not be empty"));
        }
        if lambda_grid[0] == 0 || lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "lambda grid must hold strictly ascending positive integers",
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        let gamma = match mode {
            Mode::Ma => 0.0,
            Mode::Bdp => gamma,
        };
        Ok(Self {
            cum_cost: vec![0.0; lambda_grid.len()],
            residual: vec![0.0; lambda_grid.len()],
            lambda_grid,
            steps: 0,
            gamma,
            mode,
        })
    }

    pub fn moments_accountant(lambda_grid: Vec<u32>) -> Result<Self> {
        Self::new(Mode::Ma, lambda_grid, 0.0)
    }

    pub fn bayesian(lambda_grid: Vec<u32>, gamma: f64) -> Result<Self> {
        Self::new(Mode::Bdp, lambda_grid, gamma)
    }

    pub fn lambda_grid(&self) -> &[u32] {
        &self.lambda_grid
    }

    pub fn cum_cost(&self) -> &[f64] {
        &self.cum_cost
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Probability mass charged for estimator failures so far (`T·γ`).
    pub fn gamma_mass(&self) -> f64 {
        self.steps as f64 * self.gamma
    }

    /// Adds one step's per-order costs.
    pub fn record_step(&mut self, costs: &[f64]) -> Result<()> {
        if costs.len() != self.lambda_grid.len() {
            return Err(Error::config(format!(
                "cost vector has {} entries but the lambda grid has {}",
                costs.len(),
                self.lambda_grid.len()
            )));
        }
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| !(**c >= 0.0) || c.is_infinite()) {
            return Err(Error::data(format!(
                "privacy cost at λ={} must be finite and >= 0, got {c}",
                self.lambda_grid[i]
            )));
        }
        for ((hi, lo), &c) in self.cum_cost.iter_mut().zip(self.residual.iter_mut()).zip(costs) {
            // two-sum, then renormalize so that hi = round(hi + lo)
            let s = *hi + c;
            let bp = s - *hi;
            let err = (*hi - (s - bp)) + (c - bp);
            let t = *lo + err;
            *hi = s + t;
            *lo = t - (*hi - s);
        }
        self.steps += 1;
        Ok(())
    }

    /// Smallest ε over the grid at total budget `delta`. The estimator
    /// failure mass is spent first; the remainder `β = δ - T·γ` goes into the
    /// Chernoff bound `ε = (Σc(λ) - ln β) / λ`.
    pub fn epsilon_at(&self, delta: f64) -> Result<PrivacyReport> {
        let gamma_mass = self.gamma_mass();
        if !(delta <= 1.0) {
            return Err(Error::domain(format!("delta must not exceed 1, got {delta}")));
        }
        if !(delta > gamma_mass) {
            return Err(Error::BudgetExhausted { min_delta: gamma_mass });
        }
        let ln_beta = (delta - gamma_mass).ln();
        let (idx, epsilon) = self
            .lambda_grid
            .iter()
            .zip(&self.cum_cost)
            .map(|(&l, &c)| (c - ln_beta) / l as f64)
            .enumerate()
            // strict comparison keeps the smallest λ on ties
            .fold((0, f64::INFINITY), |best, (i, e)| if e < best.1 { (i, e) } else { best });
        let epsilon = epsilon.max(0.0);
        Ok(PrivacyReport {
            epsilon,
            delta,
            lambda_star: self.lambda_grid[idx],
            attack_success: attack_success_probability(epsilon),
            mode: self.mode,
        })
    }

    /// Smallest δ over the grid at fixed ε, including `T·γ`, capped at 1.
    pub fn delta_at(&self, epsilon: f64) -> Result<PrivacyReport> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let (idx, log_beta) = self
            .lambda_grid
            .iter()
            .zip(&self.cum_cost)
            .map(|(&l, &c)| c - l as f64 * epsilon)
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
        let delta = (log_beta.exp() + self.gamma_mass()).min(1.0);
        Ok(PrivacyReport {
            epsilon,
            delta,
            lambda_star: self.lambda_grid[idx],
            attack_success: attack_success_probability(epsilon),
            mode: self.mode,
        })
    }

    /// ε at every grid order, for inspecting how the bound depends on λ.
    pub fn epsilon_by_lambda(&self, delta: f64) -> Result<Vec<(u32, f64)>> {
        let gamma_mass = self.gamma_mass();
        if !(delta > gamma_mass) {
            return Err(Error::BudgetExhausted { min_delta: gamma_mass });
        }
        let ln_beta = (delta - gamma_mass).ln();
        Ok(self
            .lambda_grid
            .iter()
            .zip(&self.cum_cost)
            .map(|(&l, &c)| (l, (c - ln_beta) / l as f64))
            .collect())
    }

    /// Versioned JSON document. Floats carry 17 significant digits so the
    /// ledger reloads bit-for-bit.
    pub fn to_json(&self) -> String {
        let grid = self
            .lambda_grid
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let floats = |v: &[f64]| v.iter().map(|c| format_f64_exact(*c)).collect::<Vec<_>>().join(",");
        let costs = floats(&self.cum_cost);
        let residual = floats(&self.residual);
        format!(
            "{{\"version\":{LEDGER_VERSION},\"mode\":\"{}\",\"gamma\":{},\"lambda_grid\":[{grid}],\"cum_cost\":[{costs}],\"cum_cost_residual\":[{residual}],\"steps\":{}}}",
            self.mode,
            format_f64_exact(self.gamma),
            self.steps
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        let bad = |msg: &str| Error::Parse { line: 1, msg: msg.to_string() };
        let version = doc["version"].as_u64().ok_or_else(|| bad("missing version"))?;
        if version != LEDGER_VERSION {
            return Err(bad(&format!("unsupported ledger version {version}")));
        }
        let mode: Mode = doc["mode"]
            .as_str()
            .ok_or_else(|| bad("missing mode"))?
            .parse()
            .map_err(|_| bad("mode must be \"ma\" or \"bdp\""))?;
        let gamma = doc["gamma"].as_f64().ok_or_else(|| bad("missing gamma"))?;
        let lambda_grid = doc["lambda_grid"]
            .as_array()
            .ok_or_else(|| bad("missing lambda_grid"))?
            .iter()
            .map(|v| v.as_u64().and_then(|l| u32::try_from(l).ok()))
            .collect::<Option<Vec<u32>>>()
            .ok_or_else(|| bad("lambda_grid entries must be positive integers"))?;
        let cum_cost = doc["cum_cost"]
            .as_array()
            .ok_or_else(|| bad("missing cum_cost"))?
            .iter()
            .map(Value::as_f64)
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("cum_cost entries must be numbers"))?;
        let residual = match doc.get("cum_cost_residual") {
            None => vec![0.0; cum_cost.len()],
            Some(v) => v
                .as_array()
                .ok_or_else(|| bad("cum_cost_residual must be an array"))?
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad("cum_cost_residual entries must be numbers"))?,
        };
        let steps = doc["steps"].as_u64().ok_or_else(|| bad("missing steps"))?;

        let mut ledger = Ledger::new(mode, lambda_grid, gamma)?;
        if cum_cost.len() != ledger.lambda_grid.len() || residual.len() != cum_cost.len() {
            return Err(bad("cum_cost, cum_cost_residual and lambda_grid lengths differ"));
        }
        if residual.iter().any(|r| !r.is_finite()) {
            return Err(bad("cum_cost_residual entries must be finite"));
        }
        if cum_cost.iter().any(|c| !(*c >= 0.0)) {
            return Err(bad("cum_cost entries must be >= 0"));
        }
        ledger.cum_cost = cum_cost;
        ledger.residual = residual;
        ledger.steps = steps;
        Ok(ledger)
    }
}

/// Scientific notation with 17 significant digits.
pub(crate) fn format_f64_exact(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.16e}")
}

/// Upper bound on a membership-inference attacker's success rate under a
/// flat prior: `1 / (1 + e^{-ε})`.
pub fn attack_success_probability(epsilon: f64) -> f64 {
    1.0 / (1.0 + (-epsilon).exp())
}

/// `k` mechanisms each `(ε, δ)` compose to `(kε, kδ)`.
pub fn compose_basic(epsilon: f64, delta: f64, k: u64) -> (f64, f64) {
    (k as f64 * epsilon, k as f64 * delta)
}

/// Datasets differing in `k` records: `(kε, kδ)`.
pub fn group_privacy(epsilon: f64, delta: f64, k: u64) -> (f64, f64) {
    (k as f64 * epsilon, k as f64 * delta)
}
