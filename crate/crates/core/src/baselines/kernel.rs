//! Local linear regression with a Gaussian kernel.

use crate::error::{PseError, Result};

/// Minimum sample size for a kernel fit.
pub const MIN_POINTS: usize = 5;
const CV_GRID: usize = 20;
const CV_LO: f64 = 0.05;
const CV_HI: f64 = 2.0;
/// Points whose kernel weight is below `exp(-WEIGHT_CUTOFF)` relative to the nearest
/// point are skipped.
const WEIGHT_CUTOFF: f64 = 40.0;
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Leave-one-out squared-error cross-validation over a logarithmic grid of
    /// `[0.05, 2] * sd(x)`.
    CrossValidated,
}

/// Fitted regression function on the covariate range of the sample.
#[derive(Clone, Debug)]
pub struct KernelFit {
    bandwidth: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl KernelFit {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Fitted value at `x`.
    pub fn fitted(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(PseError::OutOfSupport { x, lo, hi });
        }
        Ok(local_linear(&self.xs, &self.ys, x, self.bandwidth, None))
    }
}

/// Local linear estimate at `x0`, leaving out sorted index `skip`. Falls back to the
/// local constant when the weighted design is singular and to the nearest
/// observation when no weight is left.
fn local_linear(xs: &[f64], ys: &[f64], x0: f64, h: f64, skip: Option<usize>) -> f64 {
    let n = xs.len();
    let start = xs.partition_point(|&x| x < x0);
    let nearest = [start.wrapping_sub(2), start.wrapping_sub(1), start, start + 1]
        .into_iter()
        .filter(|&i| i < n && Some(i) != skip)
        .min_by(|&a, &b| (xs[a] - x0).abs().total_cmp(&(xs[b] - x0).abs()));
    let Some(nearest) = nearest else {
        return f64::NAN;
    };
    let umin = (xs[nearest] - x0) / h;
    let shift = 0.5 * umin * umin;

    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut add = |i: usize| -> bool {
        let d = xs[i] - x0;
        let u = d / h;
        let e = 0.5 * u * u - shift;
        if e > WEIGHT_CUTOFF {
            return false;
        }
        if Some(i) != skip {
            let w = (-e).exp();
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * ys[i];
            t1 += w * d * ys[i];
        }
        true
    };
    for i in (0..start).rev() {
        if !add(i) {
            break;
        }
    }
    for i in start..n {
        if !add(i) {
            break;
        }
    }
    if !(s0 > 0.0) {
        return ys[nearest];
    }
    let det = s0 * s2 - s1 * s1;
    if det <= DEGENERATE_TOL * s0 * s2 || det <= 0.0 {
        return t0 / s0;
    }
    (s2 * t0 - s1 * t1) / det
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn cv_score(xs: &[f64], ys: &[f64], h: f64) -> f64 {
    (0..xs.len())
        .map(|i| (ys[i] - local_linear(xs, ys, xs[i], h, Some(i))).powi(2))
        .sum()
}

/// Candidate bandwidths for cross-validation; empty when `x` has no spread.
pub fn cv_grid(xs: &[f64]) -> Vec<f64> {
    let sd = sample_sd(xs);
    if !(sd > 0.0) {
        return Vec::new();
    }
    let (a, b) = (CV_LO.ln(), CV_HI.ln());
    (0..CV_GRID)
        .map(|i| sd * (a + (b - a) * i as f64 / (CV_GRID - 1) as f64).exp())
        .collect()
}

/// Fits `y` on `x` by local linear regression. When every `x` is equal the fit is
/// the sample mean and the cross-validated bandwidth is reported as 1.
pub fn local_linear_fit(xs: &[f64], ys: &[f64], bandwidth: Bandwidth) -> Result<KernelFit> {
    if xs.len() != ys.len() {
        return Err(PseError::dims("kernel responses", xs.len(), ys.len()));
    }
    if xs.len() < MIN_POINTS {
        return Err(PseError::TooFewPoints {
            needed: MIN_POINTS,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(PseError::DomainError("kernel regression data must be finite".into()));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sx: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let sy: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(PseError::DomainError(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::CrossValidated => {
            let grid = cv_grid(&sx);
            let best = grid
                .iter()
                .map(|&h| (h, cv_score(&sx, &sy, h)))
                .filter(|(_, s)| s.is_finite())
                .min_by(|a, b| a.1.total_cmp(&b.1));
            best.map_or(1.0, |(h, _)| h)
        }
    };
    Ok(KernelFit {
        bandwidth: h,
        xs: sx,
        ys: sy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::lambert_w;
    use proptest::prelude::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect()
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            local_linear_fit(&[1.0, 2.0], &[1.0, 2.0], Bandwidth::CrossValidated),
            Err(PseError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn line_is_reproduced() {
        let xs = grid(30, 0.0, 1.0);
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let fit = local_linear_fit(&xs, &ys, Bandwidth::CrossValidated).unwrap();
        for x in grid(50, 0.0, 1.0) {
            assert!((fit.fitted(x).unwrap() - 2.0 * x).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_is_reproduced() {
        let xs = grid(10, 1.0, 3.0);
        let fit = local_linear_fit(&xs, &[4.5; 10], Bandwidth::Fixed(0.3)).unwrap();
        assert!((fit.fitted(2.2).unwrap() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn identical_covariates_give_the_mean() {
        let fit = local_linear_fit(&[0.5; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Bandwidth::CrossValidated).unwrap();
        assert!((fit.fitted(0.5).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn outside_range_is_rejected() {
        let xs = grid(10, 0.0, 1.0);
        let fit = local_linear_fit(&xs, &xs, Bandwidth::Fixed(0.2)).unwrap();
        assert!(matches!(fit.fitted(1.5), Err(PseError::OutOfSupport { .. })));
    }

    #[test]
    fn lambert_curve_at_cv_bandwidth() {
        let xs: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| lambert_w(x).unwrap()).collect();
        let fit = local_linear_fit(&xs, &ys, Bandwidth::CrossValidated).unwrap();
        let err = grid(81, 0.1, 0.9)
            .into_iter()
            .map(|x| (fit.fitted(x).unwrap() - lambert_w(x).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "max error {err}");
    }

    proptest! {
        #[test]
        fn affine_functions_are_exact(
            a in -5.0..5.0f64,
            b in -5.0..5.0f64,
            scale in 0.05..2.0f64,
            jitter in proptest::collection::vec(0.0..1.0f64, 20..60),
        ) {
            // Jittered grid: gaps stay below 2/n, so every window holds several points.
            let n = jitter.len() as f64;
            let xs: Vec<f64> = jitter.iter().enumerate().map(|(i, u)| (i as f64 + u) / n).collect();
            let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
            let sd = sample_sd(&xs);
            prop_assume!(sd > 1e-3);
            let fit = local_linear_fit(&xs, &ys, Bandwidth::Fixed(scale * sd)).unwrap();
            let (lo, hi) = fit.range();
            for x in grid(50, lo, hi) {
                prop_assert!((fit.fitted(x).unwrap() - (a + b * x)).abs() < 1e-8);
            }
        }
    }
}
