//! Per-step accounting shared by the simulator and the `account` command:
//! distances in, one moments-accountant and one Bayesian ledger updated.

use crate::accountant::{Ledger, Mode, PrivacyReport};
use crate::error::{Error, Result};
use crate::estimator::{bound_from_log_values, EstimatorConfig};
use crate::mechanisms::{ma_privacy_cost, signal_to_noise, MechanismConfig, MomentTable};
use crate::numerics::student_t_upper_quantile;

/// Runs the two accountants side by side over the same λ grid.
///
/// The Bayesian side caps every distance at its clip bound (the mechanism
/// clips before adding noise) and, with `clamp_to_ma`, never charges more
/// than the data-independent cost at the same order.
#[derive(Debug, Clone)]
pub struct DualAccountant {
    bdp_mech: Option<MechanismConfig>,
    estimator: EstimatorConfig,
    table: MomentTable,
    ma_costs: Option<Vec<f64>>,
    bdp_caps: Option<Vec<f64>>,
    dp: Option<Ledger>,
    bdp: Option<Ledger>,
    // Student-t quantile for the last seen sample count
    quantile_cache: Option<(usize, f64)>,
    scratch: Vec<Vec<f64>>,
    shared_mechanism: bool,
}

/// Reports for a pair of ledgers at `delta`.
///
/// When both ledgers account the same clipped mechanism the worst-case
/// guarantee also holds for the Bayesian notion, so the Bayesian report
/// falls back to it whenever it is smaller. Without this the `γ` charge
/// can leave a fully clamped Bayesian ledger a hair above the moments one.
pub fn joint_reports(
    dp: Option<&Ledger>,
    bdp: Option<&Ledger>,
    shared_mechanism: bool,
    delta: f64,
) -> Result<(Option<PrivacyReport>, Option<PrivacyReport>)> {
    let dp = dp.map(|l| l.epsilon_at(delta)).transpose()?;
    let bdp = match bdp {
        None => None,
        Some(l) => match (l.epsilon_at(delta), dp) {
            (Ok(b), Some(d)) if shared_mechanism && d.epsilon < b.epsilon => Some(PrivacyReport { mode: Mode::Bdp, ..d }),
            (Err(_), Some(d)) if shared_mechanism => Some(PrivacyReport { mode: Mode::Bdp, ..d }),
            (r, _) => Some(r?),
        },
    };
    Ok((dp, bdp))
}

impl DualAccountant {
    /// `ma_mech` drives the moments accountant and must carry a clip bound;
    /// `bdp_mech` drives the Bayesian accountant. Either may be absent.
    pub fn new(
        lambda_grid: Vec<u32>,
        ma_mech: Option<MechanismConfig>,
        bdp_mech: Option<MechanismConfig>,
        estimator: EstimatorConfig,
    ) -> Result<Self> {
        if ma_mech.is_none() && bdp_mech.is_none() {
            return Err(Error::config("no accountant selected"));
        }
        let q = match (ma_mech, bdp_mech) {
            (Some(a), Some(b)) if a.q != b.q => {
                return Err(Error::config("both accountants must share one sampling rate"))
            }
            (Some(m), _) | (None, Some(m)) => m.q,
            (None, None) => unreachable!(),
        };
        let table = MomentTable::new(q, &lambda_grid)?;
        let ma_costs = match ma_mech {
            Some(mech) => Some(
                lambda_grid
                    .iter()
                    .map(|&l| ma_privacy_cost(&mech, l))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };
        let mut bdp_caps = None;
        if let Some(mech) = bdp_mech {
            mech.validate()?;
            if estimator.clamp_to_ma && mech.clip.is_some() {
                // clamp against the worst case of the Bayesian mechanism itself
                bdp_caps = Some(
                    lambda_grid
                        .iter()
                        .map(|&l| ma_privacy_cost(&mech, l))
                        .collect::<Result<Vec<f64>>>()?,
                );
            }
            if !(estimator.gamma > 0.0 && estimator.gamma < 1.0) {
                return Err(Error::config(format!(
                    "gamma must lie in (0, 1), got {}",
                    estimator.gamma
                )));
            }
        }
        let dp = ma_mech
            .map(|_| Ledger::new(Mode::Ma, lambda_grid.clone(), 0.0))
            .transpose()?;
        let bdp = bdp_mech
            .map(|_| Ledger::new(Mode::Bdp, lambda_grid.clone(), estimator.gamma))
            .transpose()?;
        Ok(Self {
            bdp_mech,
            estimator,
            scratch: vec![Vec::new(); lambda_grid.len()],
            shared_mechanism: ma_mech.is_some() && ma_mech == bdp_mech,
            table,
            ma_costs,
            bdp_caps,
            dp,
            bdp,
            quantile_cache: None,
        })
    }

    pub fn lambda_grid(&self) -> &[u32] {
        self.table.lambdas()
    }

    pub fn ma_costs(&self) -> Option<&[f64]> {
        self.ma_costs.as_deref()
    }

    pub fn dp_ledger(&self) -> Option<&Ledger> {
        self.dp.as_ref()
    }

    pub fn bdp_ledger(&self) -> Option<&Ledger> {
        self.bdp.as_ref()
    }

    pub fn into_ledgers(self) -> (Option<Ledger>, Option<Ledger>) {
        (self.dp, self.bdp)
    }

    fn quantile_for(&mut self, m: usize) -> Result<f64> {
        if let Some((cached_m, t)) = self.quantile_cache {
            if cached_m == m {
                return Ok(t);
            }
        }
        let t = student_t_upper_quantile(self.estimator.gamma, (m - 1) as f64)?;
        self.quantile_cache = Some((m, t));
        Ok(t)
    }

    /// Estimated per-order Bayesian costs for one step's distances.
    pub fn bdp_costs(&mut self, distances: &[f64]) -> Result<Vec<f64>> {
        let mech = self
            .bdp_mech
            .ok_or_else(|| Error::config("Bayesian accountant is not enabled"))?;
        let m = distances.len();
        if m < 2 {
            return Err(Error::config(format!("estimator needs m >= 2 samples, got {m}")));
        }
        if let Some(bad) = distances.iter().find(|d| !(**d >= 0.0) || d.is_infinite()) {
            return Err(Error::data(format!("distances must be finite and >= 0, got {bad}")));
        }
        let quantile = self.quantile_for(m)?;
        let a: Vec<f64> = distances
            .iter()
            .map(|&d| {
                let d = match mech.clip {
                    Some(c) => d.min(c),
                    None => d,
                };
                signal_to_noise(d, &mech)
            })
            .collect();
        for (idx, col) in self.scratch.iter_mut().enumerate() {
            col.resize(m, 0.0);
            self.table.max_moment_column(idx, &a, col);
        }
        Ok(self
            .scratch
            .iter()
            .enumerate()
            .map(|(idx, col)| {
                let c = bound_from_log_values(col, quantile);
                match &self.bdp_caps {
                    Some(caps) => c.min(caps[idx]),
                    None => c,
                }
            })
            .collect())
    }

    /// Records one step: the worst-case cost on the moments ledger and the
    /// estimated cost from `distances` on the Bayesian ledger.
    pub fn record(&mut self, distances: &[f64]) -> Result<()> {
        if self.bdp.is_some() {
            let costs = self.bdp_costs(distances)?;
            self.bdp.as_mut().expect("checked").record_step(&costs)?;
        }
        if let (Some(ledger), Some(costs)) = (self.dp.as_mut(), self.ma_costs.as_ref()) {
            ledger.record_step(costs)?;
        }
        Ok(())
    }

    pub fn reports(&self, delta: f64) -> Result<(Option<PrivacyReport>, Option<PrivacyReport>)> {
        joint_reports(self.dp.as_ref(), self.bdp.as_ref(), self.shared_mechanism, delta)
    }
}
