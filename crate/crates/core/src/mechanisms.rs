//! Per-iteration moment terms of the subsampled Gaussian mechanism and
//! closed-form Rényi divergences for Gaussian outcome families.
//!
//! For a neighbour distance `d` and effective noise deviation `s`, write
//! `a = d² / (2 s²)`. The outcome under the larger dataset is the mixture
//! `(1-q) N(0, s²) + q N(d, s²)`, and the two directional log-moments are
//!
//! ```text
//! left  = ln E_{k ~ Bin(λ+1, q)} exp((k² - k) a)
//! right = ln E_{k ~ Bin(λ, q)}   exp((k² + k) a)
//! ```
//!
//! `left` is exactly `λ · D_{λ+1}(mixture || base)`; `right` bounds
//! `λ · D_{λ+1}(base || mixture)` from above.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_binomial_coeff, log_sum_exp_iter};

/// Noise multiplier, subsampling rate and optional clipping bound for one
/// Gaussian mechanism.
///
/// The noise standard deviation is `noise_factor · sigma · clip` when a
/// clip bound is present and `noise_factor · sigma` otherwise, so `sigma`
/// is a multiplier of the sensitivity in the first case and a raw scale in
/// gradient-norm units in the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub sigma: f64,
    pub q: f64,
    pub clip: Option<f64>,
    #[serde(default = "default_noise_factor")]
    pub noise_factor: f64,
}

fn default_noise_factor() -> f64 {
    1.0
}

impl MechanismConfig {
    pub fn new(sigma: f64, q: f64, clip: Option<f64>) -> Result<Self> {
        Self::with_noise_factor(sigma, q, clip, 1.0)
    }

    pub fn with_noise_factor(sigma: f64, q: f64, clip: Option<f64>, noise_factor: f64) -> Result<Self> {
        let cfg = Self {
            sigma,
            q,
            clip,
            noise_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::config(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("clip bound must be positive, got {c}")));
            }
        }
        if !(self.noise_factor > 0.0) || !self.noise_factor.is_finite() {
            return Err(Error::config(format!(
                "noise factor must be positive, got {}",
                self.noise_factor
            )));
        }
        Ok(())
    }

    /// Standard deviation of the added Gaussian noise, in distance units.
    pub fn noise_std(&self) -> f64 {
        self.noise_factor * self.sigma * self.clip.unwrap_or(1.0)
    }

    /// Largest neighbour distance admitted by the clip bound: one example
    /// added to or removed from a clipped sum moves it by at most `C`.
    pub fn worst_case_distance(&self) -> Option<f64> {
        self.clip
    }
}

/// The two directional log-moments at one `(d, λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalMoment {
    pub left: f64,
    pub right: f64,
}

impl DirectionalMoment {
    pub const ZERO: Self = Self {
        left: 0.0,
        right: 0.0,
    };

    /// `ln max(e^{λ D_fwd}, e^{λ D_rev})`, the per-sample quantity the
    /// estimator consumes.
    pub fn max(&self) -> f64 {
        self.left.max(self.right)
    }
}

/// Binomial weights for one subsampling rate, shared across distances.
/// Evaluating a moment then costs `O(λ)` multiplications and no binomial
/// work.
#[derive(Debug, Clone)]
pub struct MomentTable {
    q: f64,
    lambdas: Vec<u32>,
    // ln[C(n,k) q^k (1-q)^(n-k)] for n = λ+1 and n = λ respectively
    left_weights: Vec<Vec<f64>>,
    right_weights: Vec<Vec<f64>>,
    // successive pmf ratios (n-k)/(k+1) · q/(1-q), empty when q is near 1
    left_ratios: Vec<Vec<f64>>,
    right_ratios: Vec<Vec<f64>>,
    left_pmf: Vec<Vec<f64>>,
    right_pmf: Vec<Vec<f64>>,
}

// Below this top exponent f(n)·a the expm1 recurrence is exact to rounding.
const MAX_EXPM1_EXPONENT: f64 = 300.0;

// Keeps r·h·v finite between rescales; larger exponents use log space.
const MAX_LINEAR_EXPONENT: f64 = 200.0;
const MAX_ODDS: f64 = 1e8;
const RESCALE: f64 = 1e100;

// Upper-tail pmf values below this are dropped; with f(n)·a capped they
// contribute under 1e-140 in total.
const PMF_TAIL_CUTOFF: f64 = 1e-280;

fn linear_pmf(n: u32, q: f64) -> Vec<f64> {
    let mut pmf: Vec<f64> = log_binomial_pmf(n, q).into_iter().map(f64::exp).collect();
    let mode = pmf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k);
    let keep = pmf[mode..].iter().position(|&p| p < PMF_TAIL_CUTOFF).map_or(pmf.len(), |i| mode + i);
    pmf.truncate(keep.max(1));
    pmf
}

fn pmf_ratios(n: u32, q: f64) -> Vec<f64> {
    let odds = q / (1.0 - q);
    if !(odds <= MAX_ODDS) {
        return Vec::new();
    }
    (0..n).map(|k| (n - k) as f64 / (k + 1) as f64 * odds).collect()
}

/// `ln(1 + Σ_k pmf_k · (exp(f(k)·a) − 1))` with the same increments as
/// [`scaled_moment`]. Every term is non-negative, so small moments keep
/// full relative precision.
fn expm1_moment(pmf: &[f64], hm1: f64, offset: i32) -> f64 {
    // e = exp(f(k)·a) − 1, hm = exp(2(k + offset)·a) − 1
    let mut e = 0.0;
    let mut hm = if offset == 0 { 0.0 } else { hm1 };
    let mut acc = 0.0;
    for &p in &pmf[1..] {
        e += hm * (e + 1.0);
        hm += hm1 * (hm + 1.0);
        acc += p * e;
    }
    acc.ln_1p()
}

/// [`expm1_moment`] for many `a` at once; per entry the arithmetic is
/// identical.
fn expm1_moment_batch(pmf: &[f64], hm1: &[f64], offset: i32) -> Vec<f64> {
    let len = hm1.len();
    let mut e = vec![0.0; len];
    let mut hm = if offset == 0 { vec![0.0; len] } else { hm1.to_vec() };
    let mut acc = vec![0.0; len];
    for &p in &pmf[1..] {
        for (((e, hm), acc), &hm1) in e.iter_mut().zip(hm.iter_mut()).zip(acc.iter_mut()).zip(hm1) {
            *e += *hm * (*e + 1.0);
            *hm += hm1 * (*hm + 1.0);
            *acc += p * *e;
        }
    }
    acc.into_iter().map(f64::ln_1p).collect()
}

/// [`scaled_moment`] for many `a` at once.
fn scaled_moment_batch(log_w0: f64, ratios: &[f64], h2: &[f64], offset: i32) -> Vec<f64> {
    let len = h2.len();
    let mut l = vec![log_w0; len];
    let mut v = vec![1.0; len];
    let mut ls = vec![log_w0; len];
    let mut s = vec![1.0; len];
    let mut f = vec![1.0; len];
    let mut h = if offset == 0 { vec![1.0; len] } else { h2.to_vec() };
    for &r in ratios {
        let mut out_of_range = false;
        for ((v, h), &h2) in v.iter_mut().zip(h.iter_mut()).zip(h2) {
            *v *= r * *h;
            *h *= h2;
            out_of_range |= !(*v < RESCALE && *v > 1.0 / RESCALE);
        }
        if out_of_range {
            for j in 0..len {
                if !(v[j] < RESCALE && v[j] > 1.0 / RESCALE) {
                    l[j] += v[j].ln();
                    v[j] = 1.0;
                    f[j] = (l[j] - ls[j]).exp();
                    if f[j] > RESCALE {
                        s[j] *= (ls[j] - l[j]).exp();
                        ls[j] = l[j];
                        f[j] = 1.0;
                    }
                }
            }
        }
        for ((s, v), f) in s.iter_mut().zip(&v).zip(&f) {
            *s += v * f;
        }
    }
    ls.iter().zip(&s).map(|(ls, s)| ls + s.ln()).collect()
}

/// `ln Σ_k pmf_k · exp(f(k)·a)` for `f(k+1) − f(k) = 2(k + offset)·a`, by
/// running the term recurrence with a rescaled accumulator.
fn scaled_moment(log_w0: f64, ratios: &[f64], h2: f64, offset: i32) -> f64 {
    // term_k = v · e^l, sum = s · e^ls, f = e^(l - ls)
    let (mut l, mut v) = (log_w0, 1.0);
    let (mut ls, mut s) = (log_w0, 1.0);
    let mut f = 1.0;
    let mut h = if offset == 0 { 1.0 } else { h2 };
    for &r in ratios {
        v *= r * h;
        h *= h2;
        if !(v < RESCALE && v > 1.0 / RESCALE) {
            l += v.ln();
            v = 1.0;
            f = (l - ls).exp();
            if f > RESCALE {
                s *= (ls - l).exp();
                ls = l;
                f = 1.0;
            }
        }
        s += v * f;
    }
    ls + s.ln()
}

fn log_binomial_pmf(n: u32, q: f64) -> Vec<f64> {
    let ln_q = q.ln();
    let ln_keep = (1.0 - q).ln();
    (0..=n)
        .map(|k| {
            let succ = if k == 0 { 0.0 } else { k as f64 * ln_q };
            let fail = if k == n { 0.0 } else { (n - k) as f64 * ln_keep };
            log_binomial_coeff(n as u64, k as u64).expect("k <= n") + succ + fail
        })
        .collect()
}

impl MomentTable {
    pub fn new(q: f64, lambdas: &[u32]) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::config(format!("q must lie in [0, 1], got {q}")));
        }
        if lambdas.iter().any(|&l| l == 0) {
            return Err(Error::config("moment orders must be positive integers"));
        }
        Ok(Self {
            q,
            lambdas: lambdas.to_vec(),
            left_weights: lambdas.iter().map(|&l| log_binomial_pmf(l + 1, q)).collect(),
            right_weights: lambdas.iter().map(|&l| log_binomial_pmf(l, q)).collect(),
            left_ratios: lambdas.iter().map(|&l| pmf_ratios(l + 1, q)).collect(),
            right_ratios: lambdas.iter().map(|&l| pmf_ratios(l, q)).collect(),
            left_pmf: lambdas.iter().map(|&l| linear_pmf(l + 1, q)).collect(),
            right_pmf: lambdas.iter().map(|&l| linear_pmf(l, q)).collect(),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn lambdas(&self) -> &[u32] {
        &self.lambdas
    }

    /// Moments at grid index `idx` for `a = d² / (2 s²)`.
    pub fn moment_at(&self, idx: usize, a: f64) -> DirectionalMoment {
        if a == 0.0 || self.q == 0.0 {
            return DirectionalMoment::ZERO;
        }
        let n = self.lambdas[idx] as f64 + 1.0;
        if n * (n - 1.0) * a <= MAX_EXPM1_EXPONENT {
            let hm1 = (2.0 * a).exp_m1();
            return DirectionalMoment {
                left: expm1_moment(&self.left_pmf[idx], hm1, 0),
                right: expm1_moment(&self.right_pmf[idx], hm1, 1),
            };
        }
        if !self.left_ratios[idx].is_empty() && 2.0 * n * a <= MAX_LINEAR_EXPONENT {
            let h2 = (2.0 * a).exp();
            let left = scaled_moment(self.left_weights[idx][0], &self.left_ratios[idx], h2, 0);
            let right = scaled_moment(self.right_weights[idx][0], &self.right_ratios[idx], h2, 1);
            return DirectionalMoment {
                left: left.max(0.0),
                right: right.max(0.0),
            };
        }
        self.moment_log_space(idx, a)
    }

    fn moment_log_space(&self, idx: usize, a: f64) -> DirectionalMoment {
        let left = log_sum_exp_iter(
            self.left_weights[idx]
                .iter()
                .enumerate()
                .map(|(k, w)| w + (k * k - k) as f64 * a),
        );
        let right = log_sum_exp_iter(
            self.right_weights[idx]
                .iter()
                .enumerate()
                .map(|(k, w)| w + (k * k + k) as f64 * a),
        );
        // each expectation is >= 1; clamp away rounding below zero
        DirectionalMoment {
            left: left.max(0.0),
            right: right.max(0.0),
        }
    }

    /// `max(left, right)` at grid index `idx` for every entry of `a`.
    ///
    /// Same values as [`MomentTable::moment_at`], but the recurrences for
    /// all entries advance together, which is much faster for a step's
    /// worth of distances.
    pub fn max_moment_column(&self, idx: usize, a: &[f64], out: &mut [f64]) {
        assert_eq!(a.len(), out.len());
        let n = self.lambdas[idx] as f64 + 1.0;
        let linear = !self.left_ratios[idx].is_empty();
        let mut expm1_idx = Vec::new();
        let mut scaled_idx = Vec::new();
        for (j, &aj) in a.iter().enumerate() {
            if aj == 0.0 || self.q == 0.0 {
                out[j] = 0.0;
            } else if n * (n - 1.0) * aj <= MAX_EXPM1_EXPONENT {
                expm1_idx.push(j);
            } else if linear && 2.0 * n * aj <= MAX_LINEAR_EXPONENT {
                scaled_idx.push(j);
            } else {
                out[j] = self.moment_log_space(idx, aj).max();
            }
        }
        if !expm1_idx.is_empty() {
            let hm1: Vec<f64> = expm1_idx.iter().map(|&j| (2.0 * a[j]).exp_m1()).collect();
            let left = expm1_moment_batch(&self.left_pmf[idx], &hm1, 0);
            let right = expm1_moment_batch(&self.right_pmf[idx], &hm1, 1);
            for (i, &j) in expm1_idx.iter().enumerate() {
                out[j] = left[i].max(right[i]);
            }
        }
        if !scaled_idx.is_empty() {
            let h2: Vec<f64> = scaled_idx.iter().map(|&j| (2.0 * a[j]).exp()).collect();
            let left = scaled_moment_batch(self.left_weights[idx][0], &self.left_ratios[idx], &h2, 0);
            let right = scaled_moment_batch(self.right_weights[idx][0], &self.right_ratios[idx], &h2, 1);
            for (i, &j) in scaled_idx.iter().enumerate() {
                out[j] = left[i].max(0.0).max(right[i].max(0.0));
            }
        }
    }

    /// `max(left, right)` for every grid order, written into `out`.
    pub fn max_moments_into(&self, a: f64, out: &mut [f64]) {
        for (idx, slot) in out.iter_mut().enumerate() {
            *slot = self.moment_at(idx, a).max();
        }
    }
}

/// `a = d² / (2 s²)` for a distance and a mechanism.
pub fn signal_to_noise(d: f64, cfg: &MechanismConfig) -> f64 {
    let s = cfg.noise_std();
    d * d / (2.0 * s * s)
}

/// Directional log-moments of the subsampled Gaussian at one distance.
pub fn log_moment_subsampled(d: f64, cfg: &MechanismConfig, lambda: u32) -> Result<DirectionalMoment> {
    cfg.validate()?;
    if lambda == 0 {
        return Err(Error::domain("moment order λ must be a positive integer"));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("distance must be finite and non-negative, got {d}")));
    }
    let table = MomentTable::new(cfg.q, &[lambda])?;
    Ok(table.moment_at(0, signal_to_noise(d, cfg)))
}

/// Data-independent per-step cost: the moment at the worst-case distance.
pub fn ma_privacy_cost(cfg: &MechanismConfig, lambda: u32) -> Result<f64> {
    let d_worst = cfg
        .worst_case_distance()
        .ok_or_else(|| Error::config("moments-accountant cost requires a clip bound"))?;
    Ok(log_moment_subsampled(d_worst, cfg, lambda)?.max())
}

/// `D_order(N(0, σ²) shifted by d || N(0, σ²)) = order · d² / (2σ²)`.
pub fn renyi_gaussian_shared_var(d: f64, sigma: f64, order: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(d >= 0.0) || !(order > 1.0) {
        return Err(Error::domain(format!(
            "shared-variance divergence needs sigma > 0, d >= 0, order > 1 \
             (got d={d}, sigma={sigma}, order={order})"
        )));
    }
    Ok(order * d * d / (2.0 * sigma * sigma))
}

/// Rényi divergence `D_order(N(mean_a, diag var_a) || N(mean_b, diag var_b))`.
///
/// Per coordinate, with `v = (1 - order) · var_a + order · var_b`:
///
/// ```text
/// order (μa - μb)² / (2 v) + ln(σb / σa) + ln(var_b / v) / (2 (order - 1))
/// ```
///
/// The divergence is infinite when `v <= 0` in any coordinate.
pub fn renyi_gaussian_diag(
    mean_a: &[f64],
    var_a: &[f64],
    mean_b: &[f64],
    var_b: &[f64],
    order: f64,
) -> Result<f64> {
    let n = mean_a.len();
    if var_a.len() != n || mean_b.len() != n || var_b.len() != n {
        return Err(Error::domain("diagonal Gaussians must have equal dimensions"));
    }
    if !(order > 1.0) {
        return Err(Error::domain(format!("order must exceed 1, got {order}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (va, vb) = (var_a[i], var_b[i]);
        if !(va > 0.0) || !(vb > 0.0) {
            return Err(Error::domain(format!("variances must be positive at coordinate {i}")));
        }
        let mixed = (1.0 - order) * va + order * vb;
        if !(mixed > 0.0) {
            return Err(Error::DivergenceUndefined {
                coord: i,
                mixed_var: mixed,
            });
        }
        let diff = mean_a[i] - mean_b[i];
        total += order * diff * diff / (2.0 * mixed)
            + 0.5 * (vb / va).ln()
            + (vb / mixed).ln() / (2.0 * (order - 1.0));
    }
    Ok(total.max(0.0))
}
