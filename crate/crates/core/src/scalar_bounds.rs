//! Two scalar inequalities used to keep gradient norms away from a
//! degenerate regime: an upper bound for `x² ≤ A + B x^p` with `p < 2` and a
//! lower bound for `x² ≤ A x^p + B x^q` with `2 < p < q`.

use crate::error::{Error, Result};
use crate::numeric::bisect;
use serde::Serialize;


#[derive(Debug, Clone, Copy, Serialize)]
pub struct UpperBound {
    /// `B (√A + 1/2)^p ≤ √A + 1/4`
    pub admissible: bool,
    /// `√A + 1/2`
    pub bound: f64,
    /// unique positive root of `t² − A − B t^p`
    pub t1: f64,
    /// turning point `(pB/2)^{1/(2−p)}`
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LowerBound {
    /// `min{1, (A + B)^{1/(2−p)}}`
    pub xi: f64,
    /// smallest positive solution of `x² = A x^p + B x^q`
    pub x_min: f64,
}

fn check_positive(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("A and B must be positive and finite (A={a}, B={b})")));
    }
    Ok(())
}

/// Positive root of `t² − A − B t^p`, plus the admissibility test.
pub fn bound_from_above(a: f64, b: f64, p: f64) -> Result<UpperBound> {
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::Domain(format!("exponent p = {p} must lie in (0, 2)")));
    }
    check_positive(a, b)?;
    let sa = a.sqrt();
    let bound = sa + 0.5;
    let admissible = b * bound.powf(p) <= sa + 0.25;
    let t0 = (p * b / 2.0).powf(1.0 / (2.0 - p));
    // t1 > t0 is the root of the increasing 1 − A t^{−2} − B t^{p−2},
    // which stays finite where t² − A − B t^p would overflow
    let chi = |t: f64| 1.0 - a / (t * t) - b * t.powf(p - 2.0);
    let mut hi = t0.max(sa).max(1.0);
    while hi.is_finite() && chi(hi) <= 0.0 {
        hi *= 2.0;
    }
    if !hi.is_finite() || !t0.is_finite() {
        return Err(Error::NonFinite(format!("root of t² − A − B t^p (A={a}, B={b}, p={p})")));
    }
    let mut lo = hi;
    while chi(lo) > 0.0 {
        lo *= 0.5;
    }
    let t1 = bisect(chi, lo, hi, 0.0).expect("chi is increasing with a sign change");
    if admissible {
        debug_assert!(t1 <= bound + 1e-12, "upper bound violated: t1={t1}, bound={bound}");
    }
    Ok(UpperBound {
        admissible,
        bound,
        t1,
        t0,
    })
}

/// Smallest positive solution of `x² = A x^p + B x^q` and the guaranteed floor `xi`.
pub fn bound_from_below(a: f64, b: f64, p: f64, q: f64) -> Result<LowerBound> {
    if !(2.0 < p && p < q) {
        return Err(Error::Domain(format!("need 2 < p < q, got p={p}, q={q}")));
    }
    check_positive(a, b)?;
    let xi = 1f64.min((a + b).powf(1.0 / (2.0 - p)));
    // x² = A x^p + B x^q  <=>  1 = A x^{p−2} + B x^{q−2}
    let psi = |x: f64| 1.0 - a * x.powf(p - 2.0) - b * x.powf(q - 2.0);
    let x_min = if psi(1.0) == 0.0 {
        1.0
    } else {
        let mut hi = 1.0;
        while psi(hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = hi.min(1.0);
        while psi(lo) <= 0.0 {
            lo *= 0.5;
        }
        if !hi.is_finite() {
            return Err(Error::NonFinite(format!("root of x² − A x^p − B x^q (A={a}, B={b}, p={p}, q={q})")));
        }
        bisect(psi, lo, hi, 0.0).expect("psi is decreasing with a sign change")
    };
    debug_assert!(x_min >= xi * (1.0 - 1e-12), "lower bound violated: x_min={x_min}, xi={xi}");
    Ok(LowerBound { xi, x_min })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_case_from_above() {
        let r = bound_from_above(1.0, 5.0 / 6.0, 1.0).unwrap();
        assert!(r.admissible);
        assert!((r.t1 - 1.5).abs() < 1e-12);
        assert!((r.bound - 1.5).abs() < 1e-15);
    }

    #[test]
    fn overflowing_roots_are_errors() {
        assert!(matches!(bound_from_above(1.0, 1e3, 1.999), Err(Error::NonFinite(_))));
        assert!(matches!(bound_from_below(1e-3, 1e-3, 2.001, 2.002), Err(Error::NonFinite(_))));
    }

    #[test]
    fn not_admissible_from_above() {
        let r = bound_from_above(1.0, 1.0, 1.0).unwrap();
        assert!(!r.admissible);
        // quadratic root (1 + √5)/2
        assert!((r.t1 - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn vanishing_b_from_above() {
        let r = bound_from_above(4.0, 1e-12, 1.5).unwrap();
        assert!((r.t1 - 2.0).abs() < 1e-9);
        assert!(r.t1 < r.bound);
        assert_eq!(r.bound, 2.5);
    }

    #[test]
    fn from_above_domain() {
        assert!(bound_from_above(1.0, 1.0, 2.0).is_err());
        assert!(bound_from_above(1.0, 1.0, 0.0).is_err());
        assert!(bound_from_above(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn from_below_examples() {
        let r = bound_from_below(1.0, 1.0, 3.0, 4.0).unwrap();
        assert!((r.xi - 0.5).abs() < 1e-15);
        assert!((r.x_min - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-13);

        let r = bound_from_below(0.4, 0.4, 3.0, 4.0).unwrap();
        assert_eq!(r.xi, 1.0);
        assert!((r.x_min - (-0.4 + 1.76f64.sqrt()) / 0.8).abs() < 1e-13);

        let r = bound_from_below(0.25, 0.75, 3.0, 4.0).unwrap();
        assert_eq!(r.xi, 1.0);
        assert!((r.x_min - 1.0).abs() < 1e-14);
    }

    #[test]
    fn from_below_domain() {
        assert!(bound_from_below(1.0, 1.0, 2.0, 4.0).is_err());
        assert!(bound_from_below(1.0, 1.0, 4.0, 3.0).is_err());
    }
}
