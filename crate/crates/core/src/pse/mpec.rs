//! Likelihood maximization subject to the equilibrium condition as hard equality
//! constraints, for models whose coefficients are the equilibrium objects.
//!
//! An augmented Lagrangian `loglik + lambda^T g - (mu / 2) |g|^2` is maximized with
//! the Newton solver and the multipliers are updated by `lambda <- lambda - mu g`.
//! Once close, a Newton iteration on the full first-order system
//! `(grad loglik + J^T lambda, g) = 0` polishes the solution.

use nalgebra::{DMatrix, DVector};

use super::{standard_errors, stack, unstack, Algorithm, EstimateResult, HessianBlocks};
use crate::error::{PseError, Result};
use crate::models::{ConstrainedModel, ModelDerivatives};
use crate::numopt::{inf_norm, newton_maximize, solve_linear, solve_linear_matrix, symmetrize, NewtonOptions, ObjectiveEval};

#[derive(Clone, Copy, Debug)]
pub struct MpecOptions {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub constraint_tol: f64,
    pub kkt_tol: f64,
    pub max_outer: usize,
    pub newton: NewtonOptions,
    pub alpha: f64,
}

impl Default for MpecOptions {
    fn default() -> Self {
        Self {
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            constraint_tol: 1e-10,
            kkt_tol: 1e-8,
            max_outer: 40,
            newton: NewtonOptions::default(),
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MpecResult {
    pub estimate: EstimateResult,
    pub lambda: DVector<f64>,
    /// `|g|_inf` at the solution.
    pub constraint_residual: f64,
    /// `|grad loglik + J^T lambda|_inf` at the solution.
    pub kkt_residual: f64,
    pub outer_iterations: usize,
}

/// Observed information of the constrained estimator,
/// `H_tt + D^T H_bb D + D^T H_bt + H_bt^T D` with `D = -(dg/dbeta)^{-1} dg/dtheta`,
/// where the blocks are second derivatives of the Lagrangian.
pub fn mpec_standard_errors(
    blocks: &HessianBlocks,
    grad_g_beta: &DMatrix<f64>,
    grad_g_theta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = -solve_linear_matrix(grad_g_beta, grad_g_theta)?;
    let cross = d.tr_mul(&blocks.h_bt);
    Ok(symmetrize(
        &(&blocks.h_tt + d.tr_mul(&(&blocks.h_bb * &d)) + &cross + cross.transpose()),
    ))
}

struct Point {
    d: ModelDerivatives,
    g: DVector<f64>,
    jac: DMatrix<f64>,
    jb: DMatrix<f64>,
    jt: DMatrix<f64>,
}

impl Point {
    fn new<M: ConstrainedModel + ?Sized>(model: &M, z: &DVector<f64>) -> Result<Self> {
        let b = model.beta_dim();
        let (beta, theta) = unstack(z, b);
        let d = model.evaluate(&beta, &theta)?;
        let (g, jb, jt) = model.constraints(&beta, &theta)?;
        let mut jac = DMatrix::zeros(g.len(), z.len());
        jac.view_mut((0, 0), (g.len(), b)).copy_from(&jb);
        jac.view_mut((0, b), (g.len(), z.len() - b)).copy_from(&jt);
        Ok(Self { d, g, jac, jb, jt })
    }

    fn loglik_grad(&self) -> DVector<f64> {
        stack(&self.d.loglik_grad_beta, &self.d.loglik_grad_theta)
    }

    fn loglik_hess(&self) -> DMatrix<f64> {
        HessianBlocks::from_derivatives(&self.d, 1.0, 0.0).assemble()
    }

    fn lagrangian_grad(&self, lambda: &DVector<f64>) -> DVector<f64> {
        self.loglik_grad() + self.jac.tr_mul(lambda)
    }
}

fn constraint_hessian<M: ConstrainedModel + ?Sized>(model: &M, z: &DVector<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (beta, theta) = unstack(z, model.beta_dim());
    model.weighted_constraint_hessian(&beta, &theta, w)
}

fn residuals(p: &Point, lambda: &DVector<f64>) -> (f64, f64) {
    (inf_norm(&p.g), inf_norm(&p.lagrangian_grad(lambda)))
}

/// Newton iteration on the first-order system; returns the best point found.
fn polish<M: ConstrainedModel + ?Sized>(
    model: &M,
    z0: &DVector<f64>,
    lambda0: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (z0.len(), lambda0.len());
    let (mut z, mut lambda) = (z0.clone(), lambda0.clone());
    let mut p = Point::new(model, &z)?;
    let merit = |p: &Point, l: &DVector<f64>| {
        let (c, k) = residuals(p, l);
        c.max(k)
    };
    let mut current = merit(&p, &lambda);
    for _ in 0..30 {
        if current == 0.0 {
            break;
        }
        let h = p.loglik_hess() + constraint_hessian(model, &z, &lambda)?;
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, m)).copy_from(&p.jac.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&p.jac);
        let rhs = -DVector::from_iterator(
            n + m,
            p.lagrangian_grad(&lambda).iter().chain(p.g.iter()).copied(),
        );
        let Ok(step) = solve_linear(&kkt, &rhs) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let zt = &z + step.rows(0, n) * t;
            let lt = &lambda + step.rows(n, m) * t;
            if let Ok(pt) = Point::new(model, &zt) {
                let mt = merit(&pt, &lt);
                if mt < current {
                    z = zt;
                    lambda = lt;
                    p = pt;
                    current = mt;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((z, lambda))
}

/// Maximizes the likelihood subject to `g(beta, theta) = 0`. The constraint
/// Jacobian in `beta` must be square and invertible at the solution.
pub fn mpec_estimate<M: ConstrainedModel + ?Sized>(
    model: &M,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &MpecOptions,
) -> Result<MpecResult> {
    model.check_dims(beta_init, theta_init)?;
    let b = model.beta_dim();
    if model.constraint_dim() != b {
        return Err(PseError::dims("constraints", b, model.constraint_dim()));
    }
    let mut z = stack(beta_init, theta_init);
    let mut lambda = DVector::zeros(b);
    let mut mu = opts.initial_penalty;
    let mut prev_g = f64::INFINITY;
    let mut outer = 0;
    let mut done = false;
    while outer < opts.max_outer {
        outer += 1;
        let lam = lambda.clone();
        let res = newton_maximize(
            |zz: &DVector<f64>, order| {
                let p = Point::new(model, zz)?;
                let value = p.d.loglik + lam.dot(&p.g) - 0.5 * mu * p.g.norm_squared();
                if !order.wants_gradient() {
                    return Ok(ObjectiveEval::value_only(value));
                }
                let w = &lam - &p.g * mu;
                let grad = p.loglik_grad() + p.jac.tr_mul(&w);
                let hess = if order.wants_hessian() {
                    Some(p.loglik_hess() + constraint_hessian(model, zz, &w)? - p.jac.tr_mul(&p.jac) * mu)
                } else {
                    None
                };
                Ok(ObjectiveEval::new(value, grad, hess))
            },
            &z,
            &opts.newton,
        )?;
        z = res.argmax;
        let p = Point::new(model, &z)?;
        lambda -= &p.g * mu;
        let (gnorm, kkt) = residuals(&p, &lambda);
        log::debug!("augmented Lagrangian step {outer}: |g| = {gnorm:e}, kkt = {kkt:e}, mu = {mu:e}");
        if gnorm <= opts.constraint_tol && kkt <= opts.kkt_tol {
            done = true;
            break;
        }
        if gnorm < 1e-4 {
            let (zp, lp) = polish(model, &z, &lambda)?;
            let (gp, kp) = residuals(&Point::new(model, &zp)?, &lp);
            if gp <= opts.constraint_tol && kp <= opts.kkt_tol {
                z = zp;
                lambda = lp;
                done = true;
                break;
            }
        }
        if gnorm > 0.25 * prev_g {
            mu *= opts.penalty_growth;
        }
        prev_g = gnorm;
    }
    let p = Point::new(model, &z)?;
    let (gnorm, kkt) = residuals(&p, &lambda);
    if !done {
        return Err(PseError::NoConvergence(format!(
            "constrained maximization stopped with |g| = {gnorm:e} and KKT residual {kkt:e}"
        )));
    }
    let h = p.loglik_hess() + constraint_hessian(model, &z, &lambda)?;
    let info = mpec_standard_errors(&HessianBlocks::split(&h, b), &p.jb, &p.jt)?;
    let se = standard_errors(&info);
    let (beta, theta) = unstack(&z, b);
    let estimate = EstimateResult::new(
        Algorithm::Mpec,
        model.theta_names(),
        &theta,
        &beta,
        &se,
        opts.alpha,
        p.d.loglik,
        p.g.norm_squared(),
        None,
    )
    .with_diagnostics(true, outer, kkt);
    Ok(MpecResult {
        estimate,
        lambda,
        constraint_residual: gnorm,
        kkt_residual: kkt,
        outer_iterations: outer,
    })
}
