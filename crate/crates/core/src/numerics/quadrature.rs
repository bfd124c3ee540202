use super::log_add_exp;
use crate::error::{Error, Result};

const INITIAL_PANELS: usize = 64;
const MAX_REFINEMENTS: u32 = 18;
const MIN_REFINEMENTS: u32 = 3;

/// Which side of the divergence between the two-Gaussian mixture and the
/// base Gaussian is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `D(mixture || N(0, σ²))`
    Forward,
    /// `D(N(0, σ²) || mixture)`
    Reverse,
}

/// `ln ∫ exp(log_f(w)) dw` over `[lo, hi]` by composite Simpson with panel
/// doubling until the relative change drops below `rel_tol`.
///
/// The integrand is rescaled by its largest value on the initial grid so
/// that integrals of size `e^{±700}` stay representable.
pub fn log_integral_simpson<F>(log_f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("invalid integration window [{lo}, {hi}]")));
    }
    let mut n = INITIAL_PANELS;
    let mut h = (hi - lo) / n as f64;
    let shift = (0..=4 * n)
        .map(|i| log_f(lo + (hi - lo) * i as f64 / (4 * n) as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !shift.is_finite() {
        return Err(Error::Numeric {
            msg: "integrand is not finite".into(),
            lo,
            hi,
        });
    }
    let f = |w: f64| (log_f(w) - shift).exp();

    // Trapezoid sums are refined by adding midpoints; Simpson = (4 T_2n - T_n) / 3.
    let ends = 0.5 * (f(lo) + f(hi));
    let mut interior: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    let mut trap = h * (ends + interior);
    let mut simpson_prev = f64::NAN;

    for level in 0..MAX_REFINEMENTS {
        let mids: f64 = (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum();
        interior += mids;
        n *= 2;
        h *= 0.5;
        let trap_next = h * (ends + interior);
        let simpson = (4.0 * trap_next - trap) / 3.0;
        trap = trap_next;
        if level >= MIN_REFINEMENTS
            && (simpson - simpson_prev).abs() <= rel_tol * simpson.abs()
        {
            return Ok(shift + simpson.ln());
        }
        simpson_prev = simpson;
    }
    Err(Error::Numeric {
        msg: format!("Simpson quadrature did not reach relative change {rel_tol:e}"),
        lo,
        hi,
    })
}

/// Rényi divergence of order `order` between `(1-q) N(0, σ²) + q N(d, σ²)`
/// and `N(0, σ²)`, by direct numerical integration.
///
/// This is deliberately independent of the binomial expansion used by the
/// mechanisms module and serves as its reference.
pub fn gauss_mixture_renyi_numeric(
    d: f64,
    sigma: f64,
    q: f64,
    order: f64,
    direction: Direction,
) -> Result<f64> {
    if !(sigma > 0.0) || !(0.0..=1.0).contains(&q) || !(order > 1.0) || !(d >= 0.0) {
        return Err(Error::domain(format!(
            "mixture divergence needs sigma > 0, q in [0,1], order > 1, d >= 0 \
             (got d={d}, sigma={sigma}, q={q}, order={order})"
        )));
    }
    if d == 0.0 || q == 0.0 {
        return Ok(0.0);
    }
    let var2 = 2.0 * sigma * sigma;
    let log_base = |w: f64| -w * w / var2 - 0.5 * (std::f64::consts::PI * var2).ln();
    let ln_keep = (1.0 - q).ln();
    let ln_q = q.ln();
    // ln of mixture / base
    let log_ratio = move |w: f64| log_add_exp(ln_keep, ln_q + (2.0 * d * w - d * d) / var2);

    // The tilted integrand peaks near ±order·d, so the window extends past it.
    let half_width = 12.0 * sigma + order * d;
    let log_integral = match direction {
        Direction::Forward => log_integral_simpson(
            |w| log_base(w) + order * log_ratio(w),
            -half_width,
            half_width,
            1e-10,
        )?,
        Direction::Reverse => log_integral_simpson(
            |w| log_base(w) - (order - 1.0) * log_ratio(w),
            -half_width,
            half_width,
            1e-10,
        )?,
    };
    Ok((log_integral / (order - 1.0)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_standard_gaussian() {
        let ln = log_integral_simpson(|w| -0.5 * w * w, -15.0, 15.0, 1e-12).unwrap();
        let want = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ln - want).abs() < 1e-12);
    }

    #[test]
    fn integrates_huge_values() {
        let ln = log_integral_simpson(|w| 800.0 - 0.5 * w * w, -15.0, 15.0, 1e-12).unwrap();
        let want = 800.0 + 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ln - want).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_window() {
        assert!(log_integral_simpson(|w| w, 1.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        for dir in [Direction::Forward, Direction::Reverse] {
            assert_eq!(gauss_mixture_renyi_numeric(0.0, 2.0, 0.3, 4.0, dir).unwrap(), 0.0);
            assert_eq!(gauss_mixture_renyi_numeric(1.0, 2.0, 0.0, 4.0, dir).unwrap(), 0.0);
        }
    }

    #[test]
    fn pure_gaussian_closed_form() {
        // q = 1: D_order(N(d, σ²) || N(0, σ²)) = order d² / (2σ²), both directions
        for dir in [Direction::Forward, Direction::Reverse] {
            let v = gauss_mixture_renyi_numeric(1.0, 1.0, 1.0, 2.0, dir).unwrap();
            assert!((v - 1.0).abs() < 1e-8, "{v}");
            let w = gauss_mixture_renyi_numeric(2.0, 1.5, 1.0, 7.0, dir).unwrap();
            assert!((w - 7.0 * 4.0 / (2.0 * 2.25)).abs() < 1e-8 * w, "{w}");
        }
    }

    #[test]
    fn monotone_in_distance_and_order() {
        for dir in [Direction::Forward, Direction::Reverse] {
            for &q in &[0.01, 0.1, 0.5] {
                let mut prev_d = 0.0;
                for &d in &[0.1, 0.5, 1.0, 2.0, 3.0] {
                    let v = gauss_mixture_renyi_numeric(d, 1.0, q, 3.0, dir).unwrap();
                    assert!(v >= prev_d, "d grid q={q}");
                    prev_d = v;
                }
                let mut prev_o = 0.0;
                for &order in &[1.5, 2.0, 3.0, 5.0, 9.0] {
                    let v = gauss_mixture_renyi_numeric(1.0, 1.0, q, order, dir).unwrap();
                    assert!(v >= prev_o * (1.0 - 1e-12), "order grid q={q}");
                    prev_o = v;
                }
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(gauss_mixture_renyi_numeric(1.0, 0.0, 0.5, 2.0, Direction::Forward).is_err());
        assert!(gauss_mixture_renyi_numeric(1.0, 1.0, 1.5, 2.0, Direction::Forward).is_err());
        assert!(gauss_mixture_renyi_numeric(1.0, 1.0, 0.5, 1.0, Direction::Forward).is_err());
        assert!(gauss_mixture_renyi_numeric(-1.0, 1.0, 0.5, 2.0, Direction::Forward).is_err());
    }
}
