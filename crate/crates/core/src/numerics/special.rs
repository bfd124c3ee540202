use std::f64::consts::PI;

use super::ToleranceConfig;
use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lentz iterations are bounded separately from the root finder: for large
/// shape parameters the continued fraction needs O(sqrt(max(a, b))) terms.
const CF_MAX_ITER: usize = 100_000;
const CF_TINY: f64 = 1e-300;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("incomplete beta argument x={x} outside [0, 1]")));
    }
    inc_beta_xy(a, b, x, 1.0 - x)
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("beta shapes must be positive, got a={a}, b={b}")));
    }
    Ok(())
}

/// `I_x(a, b)` given both `x` and `y = 1 - x`, so callers near either end can
/// supply the small one exactly.
fn inc_beta_xy(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if y <= 0.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - beta_cf(b, a, y, x)?)
    } else {
        beta_cf(a, b, x, y)
    }
}

/// Continued fraction for `I_x(a, b)` by the modified Lentz method. Converges
/// quickly for `x < (a + 1) / (a + b + 2)`.
fn beta_cf(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < f64::EPSILON {
            return Ok((ln_front.exp() * h / a).clamp(0.0, 1.0));
        }
    }
    Err(Error::Numeric {
        msg: format!("incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"),
        lo: x,
        hi: x,
    })
}

/// Quantile of Beta(a, b): the `x` with `I_x(a, b) = p`.
pub fn beta_inv_cdf(p: f64, a: f64, b: f64) -> Result<f64> {
    beta_inv_cdf_with(p, a, b, &ToleranceConfig::default())
}

pub fn beta_inv_cdf_with(p: f64, a: f64, b: f64, tol: &ToleranceConfig) -> Result<f64> {
    Ok(beta_inv_pair(p, a, b, tol)?.0)
}

/// Returns `(x, 1 - x)` with `I_x(a, b) = p`, each side computed without
/// cancellation.
pub(crate) fn beta_inv_pair(p: f64, a: f64, b: f64, tol: &ToleranceConfig) -> Result<(f64, f64)> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("beta quantile probability p={p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok((0.0, 1.0));
    }
    if p == 1.0 {
        return Ok((1.0, 0.0));
    }
    if p <= 0.5 {
        solve_lower_tail(p, a, b, tol)
    } else {
        // I_x(a, b) = p  <=>  I_{1-x}(b, a) = 1 - p, and 1 - p is exact here.
        let (y, x) = solve_lower_tail(1.0 - p, b, a, tol)?;
        Ok((x, y))
    }
}

/// Solves `I_x(a, b) = p` for `p <= 1/2` by safeguarded Newton iteration on
/// `u = ln x` against `ln I - ln p`. The log-log transform makes the
/// power-law behaviour near zero almost linear.
fn solve_lower_tail(p: f64, a: f64, b: f64, tol: &ToleranceConfig) -> Result<(f64, f64)> {
    let target = p.ln();
    let ln_b = ln_beta(a, b);
    let eval = |u: f64| -> Result<(f64, f64, f64)> {
        let x = u.exp();
        let y = -u.exp_m1();
        let cdf = inc_beta_xy(a, b, x, y)?;
        Ok((cdf.ln() - target, x, y))
    };

    // h(0) = -ln p > 0, so the upper end of the bracket is known.
    let mut hi = 0.0_f64;
    let mut u = (a / (a + b)).ln();
    let (mut h, _, _) = eval(u)?;
    let mut lo;
    if h < 0.0 {
        lo = u;
    } else {
        hi = u;
        let mut step = 1.0;
        loop {
            let cand = hi - step;
            let (hc, _, _) = eval(cand)?;
            if hc < 0.0 || cand < -7.0e2 {
                lo = cand;
                u = cand;
                h = hc;
                break;
            }
            hi = cand;
            step *= 2.0;
        }
        if h >= 0.0 {
            // x underflows before I_x reaches p.
            return Ok((lo.exp(), -lo.exp_m1()));
        }
    }

    for _ in 0..tol.max_iter {
        let (hu, x, y) = eval(u)?;
        h = hu;
        if h == 0.0 || h.abs() <= tol.abs_tol {
            return Ok((x, y));
        }
        if h < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        if (hi - lo).abs() <= 4.0 * f64::EPSILON * u.abs().max(1.0) {
            return Ok((x, y));
        }
        let cdf = (h + target).exp();
        let ln_density = (a - 1.0) * x.ln() + (b - 1.0) * y.ln() - ln_b;
        let slope = (ln_density + u).exp() / cdf;
        let newton = u - h / slope;
        u = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numeric {
        msg: format!("beta quantile did not converge for p={p}, a={a}, b={b}"),
        lo: lo.exp(),
        hi: hi.exp(),
    })
}

/// CDF of Student's t with `dof` degrees of freedom, through
/// `I_{dof/(dof+t^2)}(dof/2, 1/2)`.
pub fn student_t_cdf(t: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(Error::domain(format!("degrees of freedom must be positive, got {dof}")));
    }
    if t.is_nan() {
        return Err(Error::domain("student-t CDF at NaN"));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let t2 = t * t;
    let x = dof / (dof + t2);
    let y = t2 / (dof + t2);
    let tail = 0.5 * inc_beta_xy(0.5 * dof, 0.5, x, y)?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// The `t > 0` with `P(T > t) = tail` for `0 < tail <= 1/2`. Taking the tail
/// mass directly keeps tiny failure probabilities such as 1e-15 exact.
pub fn student_t_upper_quantile(tail: f64, dof: f64) -> Result<f64> {
    if !(dof >= 1.0) {
        return Err(Error::domain(format!("degrees of freedom must be >= 1, got {dof}")));
    }
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::domain(format!(
            "student-t tail mass {tail} outside (0, 1): quantile is infinite"
        )));
    }
    if tail > 0.5 {
        return Ok(-student_t_upper_quantile(1.0 - tail, dof)?);
    }
    if tail == 0.5 {
        return Ok(0.0);
    }
    // 2 * tail = I_x(dof/2, 1/2) with x = dof / (dof + t^2).
    let (x, y) = beta_inv_pair(2.0 * tail, 0.5 * dof, 0.5, &ToleranceConfig::default())?;
    Ok((dof * y / x).sqrt())
}

/// Inverse CDF of Student's t.
pub fn student_t_inv_cdf(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "student-t quantile at p={p}: infinite or undefined"
        )));
    }
    if p == 0.5 {
        if !(dof >= 1.0) {
            return Err(Error::domain(format!("degrees of freedom must be >= 1, got {dof}")));
        }
        return Ok(0.0);
    }
    if p > 0.5 {
        student_t_upper_quantile(1.0 - p, dof)
    } else {
        Ok(-student_t_upper_quantile(p, dof)?)
    }
}
