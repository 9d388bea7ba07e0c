//! Cubic basis functions and the linear / logistic sieves built on them.
//!
//! With knots `t_0 < t_1 < ... < t_{n+1}` the basis has `K = n + 4` members: one
//! bump-like cubic per interior knot, a right-boundary cubic `(x - t_n)^3`, a
//! left-boundary cubic that is linear after `t_1`, the linear term `x - t_0` and
//! the constant. Each piecewise member is C1 at every knot.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PseError, Result};

/// Evaluation points this far outside `[lo, hi]` are clamped instead of rejected.
pub const SUPPORT_SLACK: f64 = 1e-12;

/// Logistic exponents are clipped to this magnitude.
pub const EXP_GUARD: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    lo: f64,
    hi: f64,
    interior: Vec<f64>,
}

impl KnotGrid {
    pub fn new(lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PseError::InvalidRange { lo, hi });
        }
        let mut prev = lo;
        for &t in &interior {
            if !(t > prev && t < hi) {
                return Err(PseError::InvalidRange { lo: prev, hi: t });
            }
            prev = t;
        }
        Ok(Self { lo, hi, interior })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// `n + 4` for `n` interior knots.
    pub fn basis_count(&self) -> usize {
        self.interior.len() + 4
    }

    /// All knots `t_0, ..., t_{n+1}`.
    pub fn knots(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.interior.len() + 2);
        t.push(self.lo);
        t.extend_from_slice(&self.interior);
        t.push(self.hi);
        t
    }

    fn clamp(&self, x: f64) -> Result<f64> {
        if x >= self.lo && x <= self.hi {
            return Ok(x);
        }
        if x >= self.lo - SUPPORT_SLACK && x <= self.hi + SUPPORT_SLACK {
            log::warn!(
                "clamping {x} into sieve support [{}, {}]",
                self.lo,
                self.hi
            );
            return Ok(x.clamp(self.lo, self.hi));
        }
        Err(PseError::OutOfSupport {
            x,
            lo: self.lo,
            hi: self.hi,
        })
    }

    /// Writes `(s_1(x), ..., s_K(x))` into `out`.
    pub fn basis_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        let x = self.clamp(x)?;
        let k_total = self.basis_count();
        if out.len() != k_total {
            return Err(PseError::dims("basis buffer", k_total, out.len()));
        }
        let t = self.knots();
        let n = self.interior.len();
        for k in 1..=n {
            let (a, b, c) = (t[k - 1], t[k], t[k + 1]);
            let a1 = (c - a) / 2.0;
            let a0 = (a * a - c * c + b * (a - c)) / 6.0;
            out[k - 1] = if x < a {
                0.0
            } else if x < b {
                (x - a).powi(3) / (6.0 * (b - a))
            } else if x < c {
                (x - c).powi(3) / (6.0 * (b - c)) + a1 * x + a0
            } else {
                a1 * x + a0
            };
        }
        out[n] = if x < t[n] { 0.0 } else { (x - t[n]).powi(3) };
        let a1 = (t[1] - t[0]) / 2.0;
        let a0 = (2.0 * t[0] * t[0] - t[1] * t[1] - t[0] * t[1]) / 6.0;
        out[n + 1] = if x < t[1] {
            (t[1] - x).powi(3) / (6.0 * (t[1] - t[0])) + a1 * x + a0
        } else {
            a1 * x + a0
        };
        out[n + 2] = x - t[0];
        out[n + 3] = 1.0;
        Ok(())
    }

    /// Writes `(s_1'(x), ..., s_K'(x))` into `out`.
    pub fn basis_derivative_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        let x = self.clamp(x)?;
        let k_total = self.basis_count();
        if out.len() != k_total {
            return Err(PseError::dims("basis buffer", k_total, out.len()));
        }
        let t = self.knots();
        let n = self.interior.len();
        for k in 1..=n {
            let (a, b, c) = (t[k - 1], t[k], t[k + 1]);
            let a1 = (c - a) / 2.0;
            out[k - 1] = if x < a {
                0.0
            } else if x < b {
                (x - a).powi(2) / (2.0 * (b - a))
            } else if x < c {
                (x - c).powi(2) / (2.0 * (b - c)) + a1
            } else {
                a1
            };
        }
        out[n] = if x < t[n] { 0.0 } else { 3.0 * (x - t[n]).powi(2) };
        let a1 = (t[1] - t[0]) / 2.0;
        out[n + 1] = if x < t[1] {
            -(t[1] - x).powi(2) / (2.0 * (t[1] - t[0])) + a1
        } else {
            a1
        };
        out[n + 2] = 1.0;
        out[n + 3] = 0.0;
        Ok(())
    }

    /// Design matrix with one row of basis values per point.
    pub fn basis_matrix(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.basis_count();
        let mut m = DMatrix::zeros(xs.len(), k);
        let mut row = vec![0.0; k];
        for (i, &x) in xs.iter().enumerate() {
            self.basis_into(x, &mut row)?;
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

/// Equally spaced interior knots `t_i = lo + i (hi - lo) / (n + 1)`.
pub fn build_knots(lo: f64, hi: f64, n_interior: usize) -> Result<KnotGrid> {
    if !(lo < hi) {
        return Err(PseError::InvalidRange { lo, hi });
    }
    let step = (hi - lo) / (n_interior as f64 + 1.0);
    let interior = (1..=n_interior).map(|i| lo + i as f64 * step).collect();
    KnotGrid::new(lo, hi, interior)
}

pub fn eval_basis(grid: &KnotGrid, x: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.basis_count()];
    grid.basis_into(x, &mut out)?;
    Ok(out)
}

pub fn eval_basis_derivative(grid: &KnotGrid, x: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.basis_count()];
    grid.basis_derivative_into(x, &mut out)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    /// `p = 1 / (1 + exp(sum_k beta_k s_k))`
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub grid: KnotGrid,
    pub link: Link,
}

impl SieveSpec {
    pub fn new(grid: KnotGrid, link: Link) -> Self {
        Self { grid, link }
    }

    /// Sieve with `k` basis functions on `[lo, hi]`; `k` must be at least 4.
    pub fn with_basis_count(lo: f64, hi: f64, k: usize, link: Link) -> Result<Self> {
        if k < 4 {
            return Err(PseError::Config(format!(
                "sieve needs at least 4 basis functions, got {k}"
            )));
        }
        Ok(Self::new(build_knots(lo, hi, k - 4)?, link))
    }

    pub fn k(&self) -> usize {
        self.grid.basis_count()
    }
}

/// `1 / (1 + exp(z))` with the exponent clipped to `EXP_GUARD`; the result is kept
/// strictly below one.
pub fn logistic_sieve_value(z: f64) -> f64 {
    let p = 1.0 / (1.0 + z.clamp(-EXP_GUARD, EXP_GUARD).exp());
    p.min(1.0 - f64::EPSILON / 2.0)
}

pub fn eval_sieve(spec: &SieveSpec, beta: &DVector<f64>, x: f64) -> Result<f64> {
    let k = spec.k();
    if beta.len() != k {
        return Err(PseError::dims("sieve coefficients", k, beta.len()));
    }
    let s = eval_basis(&spec.grid, x)?;
    let z: f64 = s.iter().zip(beta.iter()).map(|(s, b)| s * b).sum();
    Ok(match spec.link {
        Link::Identity => z,
        Link::Logistic => logistic_sieve_value(z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn knot_construction() {
        let g = build_knots(0.0, 1.0, 0).unwrap();
        assert_eq!(g.basis_count(), 4);
        let g = build_knots(0.0, 1.0, 2).unwrap();
        assert_relative_eq!(g.interior()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(g.interior()[1], 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(
            build_knots(1.0, 0.0, 1),
            Err(PseError::InvalidRange { .. })
        ));
    }

    #[test]
    fn constant_and_linear_members() {
        let g = build_knots(0.2, 1.7, 3).unwrap();
        let n = 3;
        for &x in &[0.2, 0.5, 1.1, 1.7] {
            let s = eval_basis(&g, x).unwrap();
            assert_eq!(s[n + 3], 1.0);
            assert_relative_eq!(s[n + 2], x - 0.2, epsilon = 1e-15);
            let d = eval_basis_derivative(&g, x).unwrap();
            assert_eq!(d[n + 3], 0.0);
            assert_eq!(d[n + 2], 1.0);
        }
        assert_eq!(eval_basis(&g, 0.2).unwrap()[n + 2], 0.0);
    }

    #[test]
    fn continuity_at_knots() {
        let g = build_knots(0.0, 1.0, 3).unwrap();
        let eps = 1e-7;
        for &tau in &g.knots()[1..4] {
            let l = eval_basis(&g, tau - eps).unwrap();
            let r = eval_basis(&g, tau + eps).unwrap();
            let dl = eval_basis_derivative(&g, tau - eps).unwrap();
            let dr = eval_basis_derivative(&g, tau + eps).unwrap();
            for k in 0..g.basis_count() {
                assert!((l[k] - r[k]).abs() < 1e-6, "value jump k={k} tau={tau}");
                assert!((dl[k] - dr[k]).abs() < 1e-4, "slope jump k={k} tau={tau}");
            }
            // first differences straddling the knot
            let ll = eval_basis(&g, tau - 2.0 * eps).unwrap();
            let rr = eval_basis(&g, tau + 2.0 * eps).unwrap();
            for k in 0..g.basis_count() {
                assert!(((l[k] - ll[k]) - (rr[k] - r[k])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let g = build_knots(-1.0, 2.0, 4).unwrap();
        let h = 1e-6;
        for i in 1..=50 {
            let x = -1.0 + 3.0 * i as f64 / 51.0;
            let d = eval_basis_derivative(&g, x).unwrap();
            let p = eval_basis(&g, x + h).unwrap();
            let m = eval_basis(&g, x - h).unwrap();
            for k in 0..g.basis_count() {
                let fd = (p[k] - m[k]) / (2.0 * h);
                assert!((fd - d[k]).abs() / d[k].abs().max(1.0) < 1e-6);
            }
        }
    }

    #[test]
    fn support_handling() {
        let g = build_knots(0.0, 1.0, 1).unwrap();
        assert!(eval_basis(&g, 1.0 + 1e-13).is_ok());
        assert!(matches!(
            eval_basis(&g, 1.0 + 1e-9),
            Err(PseError::OutOfSupport { .. })
        ));
    }

    #[test]
    fn sieve_values() {
        let spec = SieveSpec::with_basis_count(0.0, 1.0, 6, Link::Identity).unwrap();
        let zero = DVector::zeros(6);
        assert_eq!(eval_sieve(&spec, &zero, 0.3).unwrap(), 0.0);
        let mut e = DVector::zeros(6);
        e[5] = 1.0;
        for &x in &[0.0, 0.4, 1.0] {
            assert_eq!(eval_sieve(&spec, &e, x).unwrap(), 1.0);
        }
        let logit = SieveSpec::new(spec.grid.clone(), Link::Logistic);
        assert_eq!(eval_sieve(&logit, &zero, 0.3).unwrap(), 0.5);
        assert!(matches!(
            eval_sieve(&spec, &DVector::zeros(5), 0.3),
            Err(PseError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cubic_is_reproduced_without_interior_knots() {
        let g = build_knots(0.5, 2.0, 0).unwrap();
        let cubic = |x: f64| 1.5 - 2.0 * x + 0.7 * x * x - 0.3 * x.powi(3);
        let xs: Vec<f64> = (0..20).map(|i| 0.5 + 1.5 * i as f64 / 19.0).collect();
        let s = g.basis_matrix(&xs).unwrap();
        let y = DVector::from_iterator(20, xs.iter().map(|&x| cubic(x)));
        let beta = s.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let resid = (&s * &beta - &y).amax();
        assert!(resid < 1e-9, "residual {resid}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn logistic_sieve_stays_in_unit_interval(
                beta in proptest::collection::vec(-700.0f64..700.0, 6),
                x in 0.0f64..1.0,
            ) {
                let spec = SieveSpec::with_basis_count(0.0, 1.0, 6, Link::Logistic).unwrap();
                let p = eval_sieve(&spec, &DVector::from_vec(beta), x).unwrap();
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
