//! The penalized sieve estimator: joint and nested maximization of
//! `loglik - omega * penalty`, the implicit gradient of the profiled likelihood,
//! Schur-complement standard errors, the `omega = inf` limit and the constrained
//! (MPEC) special case.

mod mpec;
mod omega;

pub use mpec::{mpec_estimate, mpec_standard_errors, MpecOptions, MpecResult};
pub use omega::{
    continuation_estimate, interval_overlap_ratio, select_omega, sweep_omega, OmegaPath, OmegaSelection, OmegaStep,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PseError, Result};
use crate::models::{ModelDerivatives, StructuralModel};
use crate::numopt::{MaximizerResult, 
    fd_jacobian, invert, newton_maximize, solve_linear_matrix, symmetric_eigenvalues, symmetrize,
    NewtonOptions, ObjectiveEval, Order,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Joint,
    Nested,
    Amle,
    Mpec,
    Mle,
    Npl,
    #[serde(rename = "twostep")]
    TwoStep,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Joint => "joint",
            Algorithm::Nested => "nested",
            Algorithm::Amle => "amle",
            Algorithm::Mpec => "mpec",
            Algorithm::Mle => "mle",
            Algorithm::Npl => "npl",
            Algorithm::TwoStep => "twostep",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = PseError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "joint" => Algorithm::Joint,
            "nested" => Algorithm::Nested,
            "amle" => Algorithm::Amle,
            "mpec" => Algorithm::Mpec,
            "mle" => Algorithm::Mle,
            "npl" => Algorithm::Npl,
            "twostep" => Algorithm::TwoStep,
            other => return Err(PseError::Config(format!("unknown algorithm `{other}`"))),
        })
    }
}

/// Block partition of a Hessian over `(beta, theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBlocks {
    pub h_bb: DMatrix<f64>,
    pub h_bt: DMatrix<f64>,
    pub h_tt: DMatrix<f64>,
}

impl HessianBlocks {
    /// Blocks of `loglik_weight * loglik - omega * penalty`.
    pub fn from_derivatives(d: &ModelDerivatives, loglik_weight: f64, omega: f64) -> Self {
        Self {
            h_bb: symmetrize(&(&d.loglik_hess_beta * loglik_weight - &d.penalty_hess_beta * omega)),
            h_bt: &d.loglik_cross_beta_theta * loglik_weight - &d.penalty_cross_beta_theta * omega,
            h_tt: symmetrize(&(&d.loglik_hess_theta * loglik_weight - &d.penalty_hess_theta * omega)),
        }
    }

    /// Splits a stacked Hessian whose first `beta_dim` coordinates are `beta`.
    pub fn split(h: &DMatrix<f64>, beta_dim: usize) -> Self {
        let t = h.nrows() - beta_dim;
        Self {
            h_bb: h.view((0, 0), (beta_dim, beta_dim)).into_owned(),
            h_bt: h.view((0, beta_dim), (beta_dim, t)).into_owned(),
            h_tt: h.view((beta_dim, beta_dim), (t, t)).into_owned(),
        }
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let (b, t) = (self.h_bb.nrows(), self.h_tt.nrows());
        let mut h = DMatrix::zeros(b + t, b + t);
        h.view_mut((0, 0), (b, b)).copy_from(&self.h_bb);
        h.view_mut((0, b), (b, t)).copy_from(&self.h_bt);
        h.view_mut((b, 0), (t, b)).copy_from(&self.h_bt.transpose());
        h.view_mut((b, b), (t, t)).copy_from(&self.h_tt);
        h
    }
}

/// Point estimate with standard errors and Wald intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub algorithm: Algorithm,
    pub theta_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub conf_intervals: Vec<(f64, f64)>,
    pub alpha: f64,
    pub loglik: f64,
    pub penalty_value: f64,
    pub omega: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl EstimateResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        algorithm: Algorithm,
        theta_names: Vec<String>,
        theta_hat: &DVector<f64>,
        beta_hat: &DVector<f64>,
        std_errors: &DVector<f64>,
        alpha: f64,
        loglik: f64,
        penalty_value: f64,
        omega: Option<f64>,
    ) -> Self {
        let conf_intervals = confidence_intervals(theta_hat, std_errors, alpha);
        Self {
            algorithm,
            theta_names,
            theta_hat: theta_hat.iter().copied().collect(),
            beta_hat: beta_hat.iter().copied().collect(),
            std_errors: std_errors.iter().copied().collect(),
            conf_intervals,
            alpha,
            loglik,
            penalty_value,
            omega,
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
        }
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat)
    }

    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta_hat)
    }

    pub(crate) fn with_diagnostics(mut self, converged: bool, iterations: usize, gradient_norm: f64) -> Self {
        self.converged = converged;
        self.iterations = iterations;
        self.gradient_norm = gradient_norm;
        self
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `theta_i + (z_{alpha/2}, z_{1-alpha/2}) * se_i`.
pub fn confidence_intervals(theta: &DVector<f64>, se: &DVector<f64>, alpha: f64) -> Vec<(f64, f64)> {
    let lo = normal_quantile(alpha / 2.0);
    let hi = normal_quantile(1.0 - alpha / 2.0);
    theta
        .iter()
        .zip(se.iter())
        .map(|(t, s)| (t + lo * s, t + hi * s))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct EstimateOptions {
    pub newton: NewtonOptions,
    /// Options for the inner `beta` problem of the nested and AMLE algorithms.
    pub inner: NewtonOptions,
    pub alpha: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            inner: NewtonOptions::default(),
            alpha: 0.05,
        }
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(PseError::DomainError(format!(
            "smoothing parameter must be finite and nonnegative, got {omega}"
        )));
    }
    Ok(())
}

fn stack(beta: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(beta.len() + theta.len(), beta.iter().chain(theta.iter()).copied())
}

fn unstack(z: &DVector<f64>, beta_dim: usize) -> (DVector<f64>, DVector<f64>) {
    (
        z.rows(0, beta_dim).into_owned(),
        z.rows(beta_dim, z.len() - beta_dim).into_owned(),
    )
}

/// `loglik - omega * penalty` over the stacked `(beta, theta)`.
pub fn penalized_objective<M: StructuralModel + ?Sized>(
    model: &M,
    beta: &DVector<f64>,
    theta: &DVector<f64>,
    omega: f64,
) -> Result<ObjectiveEval> {
    check_omega(omega)?;
    let d = model.evaluate(beta, theta)?;
    let value = d.loglik - omega * d.penalty;
    let gradient = stack(
        &(&d.loglik_grad_beta - &d.penalty_grad_beta * omega),
        &(&d.loglik_grad_theta - &d.penalty_grad_theta * omega),
    );
    let hessian = HessianBlocks::from_derivatives(&d, 1.0, omega).assemble();
    Ok(ObjectiveEval::new(value, gradient, Some(hessian)))
}

/// Solution of the inner problem `max_beta w * loglik - omega * penalty` at fixed
/// `theta`, with derivative information at the solution.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub beta_hat: DVector<f64>,
    /// Blocks of the inner objective at `beta_hat`.
    pub blocks: HessianBlocks,
    pub derivatives: ModelDerivatives,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn inner_solve_weighted<M: StructuralModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    loglik_weight: f64,
    omega: f64,
    beta_init: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<InnerSolution> {
    inner_search(model, theta, loglik_weight, omega, beta_init, opts)?
        .require_converged()
        .and_then(|res| inner_solution(model, theta, loglik_weight, omega, res))
}

fn inner_search<M: StructuralModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    loglik_weight: f64,
    omega: f64,
    beta_init: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<MaximizerResult> {
    newton_maximize(
        |b: &DVector<f64>, order| {
            if order.wants_gradient() {
                let d = model.evaluate(b, theta)?;
                let g = &d.loglik_grad_beta * loglik_weight - &d.penalty_grad_beta * omega;
                let h = &d.loglik_hess_beta * loglik_weight - &d.penalty_hess_beta * omega;
                Ok(ObjectiveEval::new(
                    loglik_weight * d.loglik - omega * d.penalty,
                    g,
                    Some(h),
                ))
            } else {
                let (ll, pen) = model.values(b, theta)?;
                Ok(ObjectiveEval::value_only(loglik_weight * ll - omega * pen))
            }
        },
        beta_init,
        opts,
    )
}

fn inner_solution<M: StructuralModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    loglik_weight: f64,
    omega: f64,
    res: MaximizerResult,
) -> Result<InnerSolution> {
    let derivatives = model.evaluate(&res.argmax, theta)?;
    Ok(InnerSolution {
        blocks: HessianBlocks::from_derivatives(&derivatives, loglik_weight, omega),
        beta_hat: res.argmax,
        derivatives,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
    })
}

/// `beta_hat(theta, omega) = argmax_beta loglik - omega * penalty`. With `omega = 0`
/// this is the unpenalized sieve fit of the data.
pub fn inner_solve<M: StructuralModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    omega: f64,
    beta_init: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<InnerSolution> {
    check_omega(omega)?;
    inner_solve_weighted(model, theta, 1.0, omega, beta_init, opts)
}

/// Unpenalized sieve fit from the model's default starting point, the usual
/// initial value for the penalized problems. Rich sieves can leave the
/// unpenalized likelihood without a finite maximizer (a basis region where one
/// outcome is never observed), so the last iterate is returned when the search
/// runs out of iterations.
pub fn unpenalized_fit<M: StructuralModel + ?Sized>(model: &M, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let res = inner_search(model, theta, 1.0, 0.0, &model.beta_start(), &NewtonOptions::default())?;
    if !res.converged {
        log::debug!("unpenalized sieve fit stopped at gradient {:e}", res.gradient_norm);
    }
    Ok(res.argmax)
}

/// `d beta_hat / d theta = -H_bb^{-1} H_bt`.
pub fn implicit_beta_gradient(blocks: &HessianBlocks) -> Result<DMatrix<f64>> {
    solve_linear_matrix(&blocks.h_bb, &(-&blocks.h_bt))
}

fn outer_gradient_from(d: &ModelDerivatives, blocks: &HessianBlocks) -> Result<DVector<f64>> {
    let db = implicit_beta_gradient(blocks)?;
    Ok(&d.loglik_grad_theta + db.tr_mul(&d.loglik_grad_beta))
}

/// Gradient of the profiled likelihood `theta -> loglik(beta_hat(theta), theta)`:
/// `d loglik / d theta + (d beta_hat / d theta)^T d loglik / d beta`.
pub fn outer_gradient<M: StructuralModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    beta_hat: &DVector<f64>,
    blocks: &HessianBlocks,
) -> Result<DVector<f64>> {
    let d = model.evaluate(beta_hat, theta)?;
    outer_gradient_from(&d, blocks)
}

/// Observed information `H_tt - H_bt^T H_bb^{-1} H_bt` (a negative definite matrix
/// at a well-posed maximum).
pub fn fisher_information(blocks: &HessianBlocks) -> Result<DMatrix<f64>> {
    let x = solve_linear_matrix(&blocks.h_bb, &blocks.h_bt)?;
    let info = symmetrize(&(&blocks.h_tt - blocks.h_bt.tr_mul(&x)));
    if let Some(&top) = symmetric_eigenvalues(&info).last() {
        if top >= 0.0 {
            log::warn!("information matrix is not negative definite (largest eigenvalue {top:e})");
        }
    }
    Ok(info)
}

/// `sqrt(diag((-H)^{-1}))`; entries whose variance is not positive are NaN.
pub fn standard_errors(hessian: &DMatrix<f64>) -> DVector<f64> {
    match invert(&(-hessian)) {
        Ok(cov) => DVector::from_fn(hessian.nrows(), |i, _| {
            let v = cov[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                f64::NAN
            }
        }),
        Err(e) => {
            log::warn!("standard errors unavailable: {e}");
            DVector::from_element(hessian.nrows(), f64::NAN)
        }
    }
}

fn blocks_se(blocks: &HessianBlocks) -> DVector<f64> {
    match fisher_information(blocks) {
        Ok(info) => standard_errors(&info),
        Err(e) => {
            log::warn!("standard errors unavailable: {e}");
            DVector::from_element(blocks.h_tt.nrows(), f64::NAN)
        }
    }
}

/// Single-level maximization of `loglik - omega * penalty` over `(beta, theta)`.
pub fn joint_estimate<M: StructuralModel + ?Sized>(
    model: &M,
    omega: f64,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    check_omega(omega)?;
    model.check_dims(beta_init, theta_init)?;
    let b = model.beta_dim();
    let res = newton_maximize(
        |z: &DVector<f64>, order| {
            let (beta, theta) = unstack(z, b);
            if order.wants_gradient() {
                penalized_objective(model, &beta, &theta, omega)
            } else {
                let (ll, pen) = model.values(&beta, &theta)?;
                Ok(ObjectiveEval::value_only(ll - omega * pen))
            }
        },
        &stack(beta_init, theta_init),
        &opts.newton,
    )?;
    if !res.converged {
        log::warn!(
            "joint maximization stopped without converging ({:?}, gradient {:e})",
            res.stop,
            res.gradient_norm
        );
    }
    let (beta, theta) = unstack(&res.argmax, b);
    let (ll, pen) = model.values(&beta, &theta)?;
    let se = blocks_se(&HessianBlocks::split(&res.hessian_at_opt, b));
    Ok(EstimateResult::new(
        Algorithm::Joint,
        model.theta_names(),
        &theta,
        &beta,
        &se,
        opts.alpha,
        ll,
        pen,
        Some(omega),
    )
    .with_diagnostics(res.converged, res.iterations, res.gradient_norm))
}

/// Profiled problem shared by the nested and AMLE estimators: the inner objective
/// is `loglik_weight * loglik - omega * penalty` and the outer objective is the
/// likelihood at the inner solution.
struct Profile<'a, M: ?Sized> {
    model: &'a M,
    loglik_weight: f64,
    omega: f64,
    inner: NewtonOptions,
    warm: DVector<f64>,
}

impl<M: StructuralModel + ?Sized> Profile<'_, M> {
    fn solve(&self, theta: &DVector<f64>, start: &DVector<f64>) -> Result<InnerSolution> {
        inner_solve_weighted(self.model, theta, self.loglik_weight, self.omega, start, &self.inner)
    }

    fn gradient_at(&self, theta: &DVector<f64>, start: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = self.solve(theta, start)?;
        outer_gradient_from(&sol.derivatives, &sol.blocks)
    }

    /// Outer Hessian by central differences of the analytic outer gradient with
    /// step `1e-5 (1 + |theta_i|)`.
    fn hessian_at(&self, theta: &DVector<f64>, start: &DVector<f64>) -> Result<DMatrix<f64>> {
        let steps: Vec<f64> = theta.iter().map(|t| 1e-5 * (1.0 + t.abs())).collect();
        let jac = fd_jacobian(|t| self.gradient_at(t, start), theta, &steps)?;
        Ok(symmetrize(&jac))
    }

    fn evaluate(&mut self, theta: &DVector<f64>, order: Order) -> Result<ObjectiveEval> {
        let start = self.warm.clone();
        let sol = self.solve(theta, &start)?;
        let ll = sol.derivatives.loglik;
        if !order.wants_gradient() {
            return Ok(ObjectiveEval::value_only(ll));
        }
        let grad = outer_gradient_from(&sol.derivatives, &sol.blocks)?;
        self.warm = sol.beta_hat.clone();
        let hess = if order.wants_hessian() {
            Some(self.hessian_at(theta, &sol.beta_hat)?)
        } else {
            None
        };
        Ok(ObjectiveEval::new(ll, grad, hess))
    }
}

struct ProfileFit {
    theta: DVector<f64>,
    inner: InnerSolution,
    outer_hessian: DMatrix<f64>,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
}

fn maximize_profile<M: StructuralModel + ?Sized>(
    model: &M,
    loglik_weight: f64,
    omega: f64,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<ProfileFit> {
    model.check_dims(beta_init, theta_init)?;
    let mut profile = Profile {
        model,
        loglik_weight,
        omega,
        inner: opts.inner,
        warm: beta_init.clone(),
    };
    let res = newton_maximize(|t: &DVector<f64>, o| profile.evaluate(t, o), theta_init, &opts.newton)?;
    if !res.converged {
        log::warn!(
            "outer maximization stopped without converging ({:?}, gradient {:e})",
            res.stop,
            res.gradient_norm
        );
    }
    let inner = profile.solve(&res.argmax, &profile.warm.clone())?;
    Ok(ProfileFit {
        theta: res.argmax,
        inner,
        outer_hessian: res.hessian_at_opt,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
    })
}

/// Nested algorithm: for each `theta` the inner loop finds `beta_hat(theta, omega)`
/// and the outer loop maximizes `loglik(beta_hat(theta, omega), theta)`. Standard
/// errors use the joint penalized Hessian at the solution.
pub fn nested_estimate<M: StructuralModel + ?Sized>(
    model: &M,
    omega: f64,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    check_omega(omega)?;
    let fit = maximize_profile(model, 1.0, omega, theta_init, beta_init, opts)?;
    let d = &fit.inner.derivatives;
    let se = blocks_se(&HessianBlocks::from_derivatives(d, 1.0, omega));
    Ok(EstimateResult::new(
        Algorithm::Nested,
        model.theta_names(),
        &fit.theta,
        &fit.inner.beta_hat,
        &se,
        opts.alpha,
        d.loglik,
        d.penalty,
        Some(omega),
    )
    .with_diagnostics(fit.converged, fit.iterations, fit.gradient_norm))
}

/// The `omega = inf` limit: the inner loop minimizes the penalty alone, so
/// `beta(theta)` ignores the data, and the outer loop maximizes the likelihood at
/// `beta(theta)`. Standard errors come from the Hessian of the profiled likelihood.
pub fn amle_estimate<M: StructuralModel + ?Sized>(
    model: &M,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    let fit = maximize_profile(model, 0.0, 1.0, theta_init, beta_init, opts)?;
    let d = &fit.inner.derivatives;
    let se = standard_errors(&fit.outer_hessian);
    Ok(EstimateResult::new(
        Algorithm::Amle,
        model.theta_names(),
        &fit.theta,
        &fit.inner.beta_hat,
        &se,
        opts.alpha,
        d.loglik,
        d.penalty,
        None,
    )
    .with_diagnostics(fit.converged, fit.iterations, fit.gradient_norm))
}

/// Dispatches to the joint, nested or AMLE estimator.
pub fn estimate<M: StructuralModel + ?Sized>(
    model: &M,
    algorithm: Algorithm,
    omega: f64,
    theta_init: &DVector<f64>,
    beta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    match algorithm {
        Algorithm::Joint => joint_estimate(model, omega, theta_init, beta_init, opts),
        Algorithm::Nested => nested_estimate(model, omega, theta_init, beta_init, opts),
        Algorithm::Amle => amle_estimate(model, theta_init, beta_init, opts),
        other => Err(PseError::Config(format!(
            "`{}` is not a penalized sieve algorithm",
            other.name()
        ))),
    }
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;
    use crate::numopt::check_gradient;
    use nalgebra::dmatrix;

    #[test]
    fn implicit_gradient_examples() {
        let blocks = HessianBlocks {
            h_bb: dmatrix![-2.0],
            h_bt: dmatrix![4.0],
            h_tt: dmatrix![-1.0],
        };
        assert!((implicit_beta_gradient(&blocks).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
        let zero = HessianBlocks {
            h_bb: dmatrix![-2.0, 0.5; 0.5, -3.0],
            h_bt: DMatrix::zeros(2, 1),
            h_tt: dmatrix![-1.0],
        };
        assert_eq!(implicit_beta_gradient(&zero).unwrap(), DMatrix::zeros(2, 1));
    }

    #[test]
    fn fisher_information_examples() {
        let blocks = HessianBlocks {
            h_bb: dmatrix![-2.0],
            h_bt: dmatrix![1.0],
            h_tt: dmatrix![-5.0],
        };
        assert!((fisher_information(&blocks).unwrap()[(0, 0)] + 4.5).abs() < 1e-15);
        let zero = HessianBlocks {
            h_bb: dmatrix![-2.0, 0.1; 0.1, -1.0],
            h_bt: DMatrix::zeros(2, 2),
            h_tt: dmatrix![-5.0, 1.0; 1.0, -3.0],
        };
        assert_eq!(fisher_information(&zero).unwrap(), zero.h_tt);
    }

    #[test]
    fn confidence_interval_uses_normal_quantiles() {
        let ci = confidence_intervals(&DVector::from_element(1, 1.0), &DVector::from_element(1, 0.5), 0.05);
        assert!((ci[0].0 - (1.0 - 1.959963984540054 * 0.5)).abs() < 1e-12);
        assert!((normal_quantile(0.025) + 1.959964).abs() < 1e-6);
    }

    #[test]
    fn penalized_objective_definition_and_gradient() {
        let m = LinearGaussian::example();
        let beta = DVector::from_vec(vec![0.2, 0.1, -0.3]);
        let theta = DVector::from_vec(vec![0.4, -0.6]);
        let d = m.evaluate(&beta, &theta).unwrap();
        let v = penalized_objective(&m, &beta, &theta, 1.0).unwrap();
        assert!((v.value - (d.loglik - d.penalty)).abs() < 1e-15);
        let z = stack(&beta, &theta);
        let e = check_gradient(
            |z| Ok(penalized_objective(&m, &z.rows(0, 3).into_owned(), &z.rows(3, 2).into_owned(), 7.0)?.value),
            |z| Ok(penalized_objective(&m, &z.rows(0, 3).into_owned(), &z.rows(3, 2).into_owned(), 7.0)?.gradient),
            &z,
            1e-6,
        )
        .unwrap();
        assert!(e < 1e-8);
        // zero penalty: value is the likelihood for any omega
        let beta0 = &m.a * &theta;
        let v = penalized_objective(&m, &beta0, &theta, 1e6).unwrap();
        assert!((v.value - m.evaluate(&beta0, &theta).unwrap().loglik).abs() < 1e-12);
        assert!(penalized_objective(&m, &beta, &theta, -1.0).is_err());
    }

    #[test]
    fn joint_and_nested_recover_closed_form() {
        let m = LinearGaussian::example();
        let t_ls = m.theta_ls();
        let opts = EstimateOptions::default();
        for &omega in &[0.5, 10.0, 1e4] {
            let beta_expected = (&m.y + &m.a * &t_ls * (2.0 * omega)) / (1.0 + 2.0 * omega);
            for est in [
                joint_estimate(&m, omega, &DVector::zeros(2), &DVector::zeros(3), &opts).unwrap(),
                nested_estimate(&m, omega, &DVector::zeros(2), &DVector::zeros(3), &opts).unwrap(),
            ] {
                assert!((est.theta() - &t_ls).amax() < 1e-9, "{:?}", est.algorithm);
                assert!((est.beta() - &beta_expected).amax() < 1e-9);
                assert!(est.std_errors.iter().all(|s| *s > 0.0));
            }
        }
    }

    #[test]
    fn inner_solve_without_penalty_is_the_data_fit() {
        let m = LinearGaussian::example();
        let sol = inner_solve(&m, &DVector::from_vec(vec![3.0, 1.0]), 0.0, &DVector::zeros(3), &NewtonOptions::default()).unwrap();
        assert!((&sol.beta_hat - &m.y).amax() < 1e-12);
        assert!(sol.gradient_norm < 1e-8);
    }

    #[test]
    fn outer_gradient_without_beta_response_is_direct_gradient() {
        let m = Decoupled {
            y: DVector::from_vec(vec![1.0, 2.0, 0.5]),
            x: DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]),
        };
        let theta = DVector::from_element(1, 0.2);
        let beta = DVector::from_vec(vec![1.0, 1.0]);
        let d = m.evaluate(&beta, &theta).unwrap();
        let blocks = HessianBlocks::from_derivatives(&d, 1.0, 5.0);
        let g = outer_gradient(&m, &theta, &beta, &blocks).unwrap();
        assert_eq!(g, d.loglik_grad_theta);
    }

    #[test]
    fn amle_matches_limit_of_closed_form() {
        // with omega = inf the inner solution is beta = A theta and the profile
        // likelihood is maximized at the least-squares theta
        let m = LinearGaussian::example();
        let est = amle_estimate(&m, &DVector::zeros(2), &DVector::zeros(3), &EstimateOptions::default()).unwrap();
        assert!((est.theta() - m.theta_ls()).amax() < 1e-7);
        let cov = (m.a.transpose() * &m.a).try_inverse().unwrap();
        for i in 0..2 {
            assert!((est.std_errors[i] - cov[(i, i)].sqrt()).abs() < 1e-5);
        }
    }
}
