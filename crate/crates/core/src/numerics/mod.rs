//! Deterministic special functions and log-space helpers.
//!
//! Everything here is pure. The accounting code above only ever touches
//! moments through their logarithms, so the primitives are built to accept
//! and return log-domain values without materialising large exponentials.

mod quadrature;
mod special;

pub use quadrature::{gauss_mixture_renyi_numeric, log_integral_simpson, Direction};
pub(crate) use special::beta_inv_pair;
pub use special::{
    beta_inv_cdf, beta_inv_cdf_with, ln_beta, ln_gamma, reg_incomplete_beta, student_t_cdf,
    student_t_inv_cdf, student_t_upper_quantile,
};

use crate::error::{Error, Result};

/// Convergence controls shared by the iterative routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl ToleranceConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) || max_iter == 0 {
            return Err(Error::config(format!(
                "invalid tolerances abs_tol={abs_tol}, rel_tol={rel_tol}, max_iter={max_iter}"
            )));
        }
        Ok(Self {
            abs_tol,
            rel_tol,
            max_iter,
        })
    }
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(term)`, factoring out the largest term.
pub fn log_sum_exp(terms: &[f64]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty sequence"));
    }
    Ok(log_sum_exp_iter(terms.iter().copied()))
}

/// Same as [`log_sum_exp`] for an iterator that can be walked twice.
/// Returns `-inf` for an empty iterator.
pub(crate) fn log_sum_exp_iter<I>(terms: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// `ln C(n, k)` through log-gamma.
pub fn log_binomial_coeff(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::domain(format!("binomial coefficient with k={k} > n={n}")));
    }
    if k == 0 || k == n {
        return Ok(0.0);
    }
    let (n, k) = (n as f64, k as f64);
    Ok(ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0))
}
