//! Choosing the smoothing parameter: multiply `omega` by `T` until the confidence
//! intervals of consecutive estimates overlap by at least a fraction `c`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{estimate, Algorithm, EstimateOptions, EstimateResult};
use crate::error::{PseError, Result};
use crate::models::StructuralModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaSelection {
    pub omega_1: f64,
    /// Multiplicative step `T`.
    pub t: f64,
    pub alpha: f64,
    /// Required overlap fraction `c`.
    pub c: f64,
    pub max_multiplications: usize,
    pub algorithm: Algorithm,
}

impl Default for OmegaSelection {
    fn default() -> Self {
        Self {
            omega_1: 10.0,
            t: 10.0,
            alpha: 0.05,
            c: 0.95,
            max_multiplications: 15,
            algorithm: Algorithm::Joint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaStep {
    pub omega: f64,
    pub estimate: EstimateResult,
    /// Smallest componentwise overlap with the previous step's intervals.
    pub overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaPath {
    pub steps: Vec<OmegaStep>,
    /// Whether the overlap threshold was reached before the cap.
    pub converged: bool,
}

impl OmegaPath {
    pub fn last(&self) -> &OmegaStep {
        self.steps.last().expect("an omega path has at least one step")
    }
}

/// `min(|a & b| / |a|, |a & b| / |b|)`. When either interval has zero length the
/// ratio is 1 if both are the same point and 0 otherwise.
pub fn interval_overlap_ratio(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for &(lo, hi) in &[a, b] {
        if !(lo <= hi) {
            return Err(PseError::InvalidInterval { lo, hi });
        }
    }
    let (la, lb) = (a.1 - a.0, b.1 - b.0);
    if la == 0.0 || lb == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    Ok((inter / la).min(inter / lb))
}

/// Smallest overlap over components; intervals that are not defined count as 0.
fn componentwise_overlap(prev: &EstimateResult, cur: &EstimateResult) -> f64 {
    prev.conf_intervals
        .iter()
        .zip(&cur.conf_intervals)
        .map(|(&a, &b)| interval_overlap_ratio(a, b).unwrap_or(0.0))
        .fold(1.0, f64::min)
}

fn penalized_value(est: &EstimateResult, omega: f64) -> f64 {
    est.loglik - omega * est.penalty_value
}

/// Estimate from the warm start and, when the model offers one, from a restart
/// built from the warm `theta`; the higher penalized objective wins.
fn best_start_estimate<M: StructuralModel + ?Sized>(
    model: &M,
    algorithm: Algorithm,
    omega: f64,
    theta: &DVector<f64>,
    beta: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    let warm = estimate(model, algorithm, omega, theta, beta, opts);
    let Some(restart) = model.beta_restart(theta)? else {
        return warm;
    };
    let fresh = estimate(model, algorithm, omega, theta, &restart, opts);
    match (warm, fresh) {
        (Ok(w), Ok(f)) if penalized_value(&f, omega) > penalized_value(&w, omega) => Ok(f),
        (Ok(w), _) => Ok(w),
        (Err(e), Err(_)) => Err(e),
        (Err(e), Ok(f)) => {
            log::debug!("warm start failed at omega {omega:e} ({e}); using the restart");
            Ok(f)
        }
    }
}

fn chained_steps<M, I>(
    model: &M,
    omegas: I,
    algorithm: Algorithm,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
    mut stop: impl FnMut(&OmegaStep) -> bool,
) -> Result<Vec<OmegaStep>>
where
    M: StructuralModel + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let mut steps: Vec<OmegaStep> = Vec::new();
    let (mut theta, mut beta) = (theta_init.clone(), beta_init.clone());
    for omega in omegas {
        let est = best_start_estimate(model, algorithm, omega, &theta, &beta, opts)?;
        theta = est.theta();
        beta = est.beta();
        let overlap = steps.last().map(|p| componentwise_overlap(&p.estimate, &est));
        steps.push(OmegaStep {
            omega,
            estimate: est,
            overlap,
        });
        if stop(steps.last().expect("just pushed")) {
            break;
        }
    }
    Ok(steps)
}

/// Runs the selection loop from `omega_1`, warm-starting each step from the
/// previous one. Stops at the first step whose overlap with its predecessor is at
/// least `c`, or after `max_multiplications` increases with `converged = false`.
pub fn select_omega<M: StructuralModel + ?Sized>(
    model: &M,
    sel: &OmegaSelection,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<(OmegaPath, EstimateResult)> {
    if !(sel.omega_1 > 0.0) || !(sel.t > 1.0) || !(sel.c > 0.0 && sel.c <= 1.0) {
        return Err(PseError::Config(format!(
            "omega selection needs omega_1 > 0, T > 1 and 0 < c <= 1, got {}, {}, {}",
            sel.omega_1, sel.t, sel.c
        )));
    }
    if !(sel.alpha > 0.0 && sel.alpha < 1.0) {
        return Err(PseError::Config(format!("alpha must be in (0, 1), got {}", sel.alpha)));
    }
    if matches!(sel.algorithm, Algorithm::Amle) {
        return Err(PseError::Config("omega selection needs a finite-omega algorithm".into()));
    }
    let opts = EstimateOptions {
        alpha: sel.alpha,
        ..*opts
    };
    let omegas = (0..=sel.max_multiplications).map(|i| sel.omega_1 * sel.t.powi(i as i32));
    let steps = chained_steps(model, omegas, sel.algorithm, theta_init, beta_init, &opts, |s| {
        s.overlap.is_some_and(|o| o >= sel.c)
    })?;
    let converged = steps
        .last()
        .and_then(|s| s.overlap)
        .is_some_and(|o| o >= sel.c);
    if !converged {
        log::warn!(
            "confidence intervals did not stabilize within {} increases of omega",
            sel.max_multiplications
        );
    }
    let path = OmegaPath { steps, converged };
    let est = path.last().estimate.clone();
    Ok((path, est))
}

/// Estimates along a given sequence of `omega` values with warm starts; each step
/// records its overlap with the previous one.
pub fn sweep_omega<M: StructuralModel + ?Sized>(
    model: &M,
    omegas: &[f64],
    algorithm: Algorithm,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<Vec<OmegaStep>> {
    chained_steps(model, omegas.iter().copied(), algorithm, theta_init, beta_init, opts, |_| false)
}

/// Estimate at a fixed `omega`, reached through warm-started steps
/// `omega_1 * t^i` below it. Large `omega` make the criterion ill-conditioned, so
/// a cold start there can stall far from the maximizer.
#[allow(clippy::too_many_arguments)]
pub fn continuation_estimate<M: StructuralModel + ?Sized>(
    model: &M,
    algorithm: Algorithm,
    omega: f64,
    omega_1: f64,
    t: f64,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    let mut omegas = Vec::new();
    if omega_1 > 0.0 && t > 1.0 {
        let mut w = omega_1;
        while w < omega {
            omegas.push(w);
            w *= t;
        }
    }
    omegas.push(omega);
    let mut steps = chained_steps(model, omegas, algorithm, theta_init, beta_init, opts, |_| false)?;
    Ok(steps.pop().expect("at least one step").estimate)
}
