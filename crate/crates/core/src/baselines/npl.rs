//! Nested pseudo-likelihood: alternate a pseudo-MLE in `theta` given estimated
//! equilibrium objects `p_hat` with one application of the equilibrium map.

use nalgebra::{DMatrix, DVector};

use crate::error::{PseError, Result};
use crate::models::{entry_best_response, logistic, EntryDataset, EntryTheta, Firm, MonopolyDataset};
use crate::numopt::{inf_norm, newton_maximize, ObjectiveEval, Order};
use crate::pse::{standard_errors, Algorithm, EstimateOptions, EstimateResult};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A model whose likelihood can be evaluated with the equilibrium objects replaced by
/// one application of the map `Psi(p_hat, theta)`.
pub trait PseudoLikelihood {
    fn theta_names(&self) -> Vec<String>;

    /// Length of `p_hat`.
    fn state_dim(&self) -> usize;

    /// Pseudo-log-likelihood in `theta` at fixed `p_hat`, with gradient and Hessian
    /// when asked.
    fn pseudo_loglik(&self, p_hat: &DVector<f64>, theta: &DVector<f64>, order: Order) -> Result<ObjectiveEval>;

    /// `Psi(p_hat, theta)`.
    fn update(&self, p_hat: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;

    fn check_state(&self, p_hat: &DVector<f64>) -> Result<()> {
        if p_hat.len() != self.state_dim() {
            return Err(PseError::dims("p_hat", self.state_dim(), p_hat.len()));
        }
        if p_hat.iter().any(|p| !p.is_finite()) {
            return Err(PseError::DomainError("p_hat has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Iterate of the NPL algorithm.
#[derive(Clone, Debug)]
pub struct NplState {
    pub p_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NplOptions {
    pub max_iter: usize,
    /// Stop when `|theta^{k+1} - theta^k|_inf <= tol`.
    pub tol: f64,
}

impl Default for NplOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NplResult {
    pub estimate: EstimateResult,
    pub state: NplState,
    /// Pseudo-log-likelihood at `(theta^{k+1}, p^{k+1})` after each iteration.
    pub pseudo_loglik_path: Vec<f64>,
}

impl PseudoLikelihood for MonopolyDataset {
    fn theta_names(&self) -> Vec<String> {
        vec!["theta".to_string()]
    }

    fn state_dim(&self) -> usize {
        self.len()
    }

    /// `y_j ~ N(theta x_j exp(-p_j), 1)`, linear in `theta`.
    fn pseudo_loglik(&self, p_hat: &DVector<f64>, theta: &DVector<f64>, order: Order) -> Result<ObjectiveEval> {
        if theta.len() != 1 {
            return Err(PseError::dims("theta", 1, theta.len()));
        }
        let (mut v, mut g, mut h) = (0.0, 0.0, 0.0);
        for (r, &p) in self.records().iter().zip(p_hat.iter()) {
            let z = r.x * (-p).exp();
            let e = r.y - theta[0] * z;
            v -= 0.5 * e * e + HALF_LN_2PI;
            g += e * z;
            h -= z * z;
        }
        Ok(match order {
            Order::Value => ObjectiveEval::value_only(v),
            Order::Gradient => ObjectiveEval::new(v, DVector::from_element(1, g), None),
            Order::Hessian => ObjectiveEval::new(v, DVector::from_element(1, g), Some(DMatrix::from_element(1, 1, h))),
        })
    }

    fn update(&self, p_hat: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(p_hat)?;
        Ok(DVector::from_iterator(
            self.len(),
            self.records().iter().zip(p_hat.iter()).map(|(r, &p)| theta[0] * r.x * (-p).exp()),
        ))
    }
}

/// `p_hat` stacks the Walmart probabilities of every market, then Kmart's.
impl PseudoLikelihood for EntryDataset {
    fn theta_names(&self) -> Vec<String> {
        EntryTheta::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn state_dim(&self) -> usize {
        2 * self.len()
    }

    fn pseudo_loglik(&self, p_hat: &DVector<f64>, theta: &DVector<f64>, order: Order) -> Result<ObjectiveEval> {
        let th = EntryTheta::from_slice(theta.as_slice())?;
        let m = self.len();
        let mut v = 0.0;
        let mut g = DVector::zeros(5);
        let mut h = DMatrix::zeros(5, 5);
        for (i, r) in self.records().iter().enumerate() {
            let (pw, pk) = (p_hat[i], p_hat[m + i]);
            let terms = [
                (r.d_w, th.pi_w + th.gamma * r.x - pk * th.delta_w, [1.0, -pk, 0.0, 0.0, r.x]),
                (r.d_k, th.pi_k + th.gamma * r.x - pw * th.delta_k, [0.0, 0.0, 1.0, -pw, r.x]),
            ];
            for (d, u, du) in terms {
                let d = d as f64;
                // Bernoulli log-likelihood of a logit: d u - log(1 + e^u).
                v += d * u - softplus(u);
                if order.wants_gradient() {
                    let q = logistic(u);
                    let du = DVector::from_row_slice(&du);
                    g.axpy(d - q, &du, 1.0);
                    if order.wants_hessian() {
                        h.ger(-q * (1.0 - q), &du, &du, 1.0);
                    }
                }
            }
        }
        Ok(match order {
            Order::Value => ObjectiveEval::value_only(v),
            Order::Gradient => ObjectiveEval::new(v, g, None),
            Order::Hessian => ObjectiveEval::new(v, g, Some(h)),
        })
    }

    fn update(&self, p_hat: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(p_hat)?;
        let th = EntryTheta::from_slice(theta.as_slice())?;
        let m = self.len();
        let mut next = DVector::zeros(2 * m);
        for (i, r) in self.records().iter().enumerate() {
            next[i] = entry_best_response(p_hat[m + i], r.x, &th, Firm::W);
            next[m + i] = entry_best_response(p_hat[i], r.x, &th, Firm::K);
        }
        Ok(next)
    }

    fn check_state(&self, p_hat: &DVector<f64>) -> Result<()> {
        if p_hat.len() != self.state_dim() {
            return Err(PseError::dims("p_hat", self.state_dim(), p_hat.len()));
        }
        if p_hat.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(PseError::DomainError("entry probabilities must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Runs NPL from `p_init`. Each pseudo-MLE is warm-started from the previous
/// `theta`. Standard errors come from the pseudo-likelihood Hessian at the final
/// iterate and ignore the estimation error in `p_hat`.
pub fn npl_estimate<P: PseudoLikelihood + ?Sized>(
    model: &P,
    p_init: &DVector<f64>,
    theta_init: &DVector<f64>,
    npl: &NplOptions,
    opts: &EstimateOptions,
) -> Result<NplResult> {
    model.check_state(p_init)?;
    let mut p = p_init.clone();
    let mut theta = theta_init.clone();
    let mut path = Vec::new();
    for iteration in 1..=npl.max_iter {
        let res = newton_maximize(|t: &DVector<f64>, o| model.pseudo_loglik(&p, t, o), &theta, &opts.newton)?
            .require_converged()?;
        let next_p = model.update(&p, &res.argmax)?;
        model.check_state(&next_p)?;
        let value = model.pseudo_loglik(&next_p, &res.argmax, Order::Value)?.value;
        if !value.is_finite() {
            return Err(PseError::NonFiniteObjective(format!("pseudo-likelihood at NPL iteration {iteration}")));
        }
        path.push(value);
        let change = inf_norm(&(&res.argmax - &theta));
        theta = res.argmax;
        p = next_p;
        if change <= npl.tol {
            let hess = model
                .pseudo_loglik(&p, &theta, Order::Hessian)?
                .hessian
                .expect("Hessian was requested");
            let se = standard_errors(&hess);
            let estimate = EstimateResult::new(
                Algorithm::Npl,
                model.theta_names(),
                &theta,
                &p,
                &se,
                opts.alpha,
                value,
                0.0,
                None,
            )
            .with_diagnostics(true, iteration, change);
            return Ok(NplResult {
                estimate,
                state: NplState {
                    p_hat: p,
                    theta_hat: theta,
                    iteration,
                },
                pseudo_loglik_path: path,
            });
        }
    }
    Err(PseError::NoConvergence(format!(
        "NPL theta sequence did not settle within {} iterations",
        npl.max_iter
    )))
}
