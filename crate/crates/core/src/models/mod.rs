//! Structural models: a likelihood, an equilibrium map and a penalty measuring how far
//! a sieve approximation is from satisfying the equilibrium condition.

mod entry;
mod lambert;
mod monopoly;

pub use entry::{
    entry_best_response, entry_solve_equilibrium, logistic, DiscreteEntryModel, EntryDataset,
    EntryModel, EntryRecord, EntryTheta, FitCurveRow, Firm,
};
pub use lambert::{lambert_w, lambert_w_contraction};
pub use monopoly::{
    monopoly_solve, DiscreteMonopolyModel, MonopolyDataset, MonopolyModel, MonopolyRecord,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{PseError, Result};
use crate::numopt::{check_gradient, check_jacobian};

/// Log-likelihood and penalty together with every first and second derivative block
/// with respect to the sieve coefficients `beta` and the structural parameters `theta`.
#[derive(Clone, Debug)]
pub struct ModelDerivatives {
    pub loglik: f64,
    pub loglik_grad_beta: DVector<f64>,
    pub loglik_hess_beta: DMatrix<f64>,
    pub loglik_grad_theta: DVector<f64>,
    pub loglik_hess_theta: DMatrix<f64>,
    /// `d^2 l / d beta d theta`, `dim(beta) x dim(theta)`.
    pub loglik_cross_beta_theta: DMatrix<f64>,
    pub penalty: f64,
    pub penalty_grad_beta: DVector<f64>,
    pub penalty_hess_beta: DMatrix<f64>,
    pub penalty_grad_theta: DVector<f64>,
    pub penalty_hess_theta: DMatrix<f64>,
    pub penalty_cross_beta_theta: DMatrix<f64>,
}

impl ModelDerivatives {
    pub(crate) fn zeros(beta_dim: usize, theta_dim: usize) -> Self {
        Self {
            loglik: 0.0,
            loglik_grad_beta: DVector::zeros(beta_dim),
            loglik_hess_beta: DMatrix::zeros(beta_dim, beta_dim),
            loglik_grad_theta: DVector::zeros(theta_dim),
            loglik_hess_theta: DMatrix::zeros(theta_dim, theta_dim),
            loglik_cross_beta_theta: DMatrix::zeros(beta_dim, theta_dim),
            penalty: 0.0,
            penalty_grad_beta: DVector::zeros(beta_dim),
            penalty_hess_beta: DMatrix::zeros(beta_dim, beta_dim),
            penalty_grad_theta: DVector::zeros(theta_dim),
            penalty_hess_theta: DMatrix::zeros(theta_dim, theta_dim),
            penalty_cross_beta_theta: DMatrix::zeros(beta_dim, theta_dim),
        }
    }
}

/// A model whose observables are pinned down by `p = Psi(p, theta)` and whose solution
/// is approximated by a sieve with coefficients `beta`.
pub trait StructuralModel {
    fn beta_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn theta_names(&self) -> Vec<String>;

    fn evaluate(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<ModelDerivatives>;

    /// `(loglik, penalty)` only.
    fn values(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64)> {
        let d = self.evaluate(beta, theta)?;
        Ok((d.loglik, d.penalty))
    }

    /// Starting point for the sieve coefficients before any fit.
    fn beta_start(&self) -> DVector<f64> {
        DVector::zeros(self.beta_dim())
    }

    /// Optional alternative start for the sieve coefficients built from `theta`
    /// alone. Path algorithms try it next to the warm start and keep the better
    /// penalized fit, which lets them leave plateaus where a saturated sieve has a
    /// vanishing gradient.
    fn beta_restart(&self, _theta: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        Ok(None)
    }

    fn check_dims(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.beta_dim() {
            return Err(PseError::dims("beta", self.beta_dim(), beta.len()));
        }
        if theta.len() != self.theta_dim() {
            return Err(PseError::dims("theta", self.theta_dim(), theta.len()));
        }
        Ok(())
    }
}

/// Finite-state model whose sieve coefficients are the equilibrium objects
/// themselves, with the equilibrium condition written as `g(beta, theta) = 0`.
pub trait ConstrainedModel: StructuralModel {
    /// Number of constraints.
    fn constraint_dim(&self) -> usize;

    /// `g`, `dg/dbeta` (`m x dim(beta)`) and `dg/dtheta` (`m x dim(theta)`).
    fn constraints(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)>;

    /// `sum_i weights_i * hess g_i` over the stacked `(beta, theta)`.
    fn weighted_constraint_hessian(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<DMatrix<f64>>;
}

/// Abscissae at which the equilibrium residual is summed.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyGrid {
    points: Vec<f64>,
}

impl PenaltyGrid {
    /// `len` equally spaced points covering `[lo, hi]` including both ends.
    pub fn uniform(lo: f64, hi: f64, len: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(PseError::InvalidRange { lo, hi });
        }
        if len < 2 {
            return Err(PseError::TooFewPoints { needed: 2, got: len });
        }
        let step = (hi - lo) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|i| lo + i as f64 * step).collect();
        points[len - 1] = hi;
        Ok(Self { points })
    }

    /// Grid from arbitrary points, sorted ascending.
    pub fn from_points(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(PseError::TooFewPoints { needed: 1, got: 0 });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(PseError::DomainError("penalty grid point not finite".into()));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn validate(&self, lo: f64, hi: f64, k: usize) -> Result<()> {
        if self.points.len() < k {
            return Err(PseError::TooFewPoints {
                needed: k,
                got: self.points.len(),
            });
        }
        let (first, last) = (self.points[0], self.points[self.points.len() - 1]);
        if first < lo || last > hi {
            return Err(PseError::OutOfSupport {
                x: if first < lo { first } else { last },
                lo,
                hi,
            });
        }
        Ok(())
    }
}

/// `sum_i w_i s_i s_i^T` over the rows `s_i` of `basis`.
pub(crate) fn weighted_gram(basis: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let k = basis.ncols();
    let mut out = DMatrix::zeros(k, k);
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let sa = basis[(i, a)] * wi;
            if sa == 0.0 {
                continue;
            }
            for b in a..k {
                out[(a, b)] += sa * basis[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// `sum_i w_i s_i`.
pub(crate) fn weighted_sum(basis: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    basis.tr_mul(&DVector::from_column_slice(w))
}

/// Relative errors of every analytic derivative block against central differences
/// with step `h`, in the order of the [`ModelDerivatives`] fields.
pub fn check_derivatives<M: StructuralModel + ?Sized>(
    model: &M,
    beta: &DVector<f64>,
    theta: &DVector<f64>,
    h: f64,
) -> Result<Vec<(&'static str, f64)>> {
    let d = model.evaluate(beta, theta)?;
    let ll_b = |b: &DVector<f64>| Ok(model.evaluate(b, theta)?.loglik);
    let ll_t = |t: &DVector<f64>| Ok(model.evaluate(beta, t)?.loglik);
    let pen_b = |b: &DVector<f64>| Ok(model.evaluate(b, theta)?.penalty);
    let pen_t = |t: &DVector<f64>| Ok(model.evaluate(beta, t)?.penalty);
    Ok(vec![
        ("loglik_grad_beta", check_gradient(ll_b, |_| Ok(d.loglik_grad_beta.clone()), beta, h)?),
        (
            "loglik_hess_beta",
            check_jacobian(|b| Ok(model.evaluate(b, theta)?.loglik_grad_beta), &d.loglik_hess_beta, beta, h)?,
        ),
        ("loglik_grad_theta", check_gradient(ll_t, |_| Ok(d.loglik_grad_theta.clone()), theta, h)?),
        (
            "loglik_hess_theta",
            check_jacobian(|t| Ok(model.evaluate(beta, t)?.loglik_grad_theta), &d.loglik_hess_theta, theta, h)?,
        ),
        (
            "loglik_cross_beta_theta",
            check_jacobian(|t| Ok(model.evaluate(beta, t)?.loglik_grad_beta), &d.loglik_cross_beta_theta, theta, h)?,
        ),
        ("penalty_grad_beta", check_gradient(pen_b, |_| Ok(d.penalty_grad_beta.clone()), beta, h)?),
        (
            "penalty_hess_beta",
            check_jacobian(|b| Ok(model.evaluate(b, theta)?.penalty_grad_beta), &d.penalty_hess_beta, beta, h)?,
        ),
        ("penalty_grad_theta", check_gradient(pen_t, |_| Ok(d.penalty_grad_theta.clone()), theta, h)?),
        (
            "penalty_hess_theta",
            check_jacobian(|t| Ok(model.evaluate(beta, t)?.penalty_grad_theta), &d.penalty_hess_theta, theta, h)?,
        ),
        (
            "penalty_cross_beta_theta",
            check_jacobian(|t| Ok(model.evaluate(beta, t)?.penalty_grad_beta), &d.penalty_cross_beta_theta, theta, h)?,
        ),
    ])
}
