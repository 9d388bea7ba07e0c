use crate::error::{PseError, Result};

/// Principal branch of the Lambert W function on `[0, inf)`, `W(x) e^{W(x)} = x`,
/// by bisection on `[0, max(1, ln(1 + x)) + 1]`.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(PseError::DomainError(format!(
            "lambert_w needs a finite x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64.max((1.0 + x).ln()) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // take whichever bracket end has the smaller residual
    let (rlo, rhi) = ((lo * lo.exp() - x).abs(), (hi * hi.exp() - x).abs());
    Ok(if rlo <= rhi { lo } else { hi })
}

/// Lambert W on `[0, e)` by iterating the contraction `w <- x e^{-w}` from zero.
///
/// Convergence slows as `x` approaches `e`; iteration stops once the geometric
/// estimate of the remaining error drops below `1e-14`.
pub fn lambert_w_contraction(x: f64) -> Result<f64> {
    if !(x >= 0.0 && x < std::f64::consts::E) {
        return Err(PseError::DomainError(format!(
            "contraction needs 0 <= x < e, got {x}"
        )));
    }
    let mut w = 0.0_f64;
    let mut prev_step = f64::INFINITY;
    for _ in 0..10_000_000 {
        let next = x * (-w).exp();
        let step = (next - w).abs();
        // near the fixed point rounding can leave a two-cycle a few ulps wide
        if step == 0.0 || (step >= prev_step && step < 1e-12) {
            return Ok(0.5 * (next + w));
        }
        let rate = (step / prev_step).min(1.0 - 1e-12);
        w = next;
        if prev_step.is_finite() && step * rate / (1.0 - rate) < 1e-14 {
            return Ok(w);
        }
        prev_step = step;
    }
    Err(PseError::NoConvergence(format!(
        "lambert_w contraction at x = {x}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn special_values() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(E).unwrap() - 1.0).abs() < 1e-15);
        let w = lambert_w(1.0).unwrap();
        assert!((w * w.exp() - 1.0).abs() < 1e-12);
        assert!(matches!(lambert_w(-0.1), Err(PseError::DomainError(_))));
    }

    #[test]
    fn residual_and_monotonicity_on_grid() {
        let mut prev = -1.0;
        for i in 0..1000 {
            let x = 50.0 * i as f64 / 999.0;
            let w = lambert_w(x).unwrap();
            assert!((w * w.exp() - x).abs() < 1e-12 * (1.0 + x), "x = {x}");
            assert!(w > prev || (i == 0 && w == 0.0));
            prev = w;
        }
    }

    #[test]
    fn contraction_agrees_with_bisection() {
        for i in 1..=200 {
            let x = E * i as f64 / 201.0;
            let a = lambert_w(x).unwrap();
            let b = lambert_w_contraction(x).unwrap();
            assert!((a - b).abs() < 1e-10, "x = {x}: {a} vs {b}");
        }
        assert!(lambert_w_contraction(3.0).is_err());
    }
}
