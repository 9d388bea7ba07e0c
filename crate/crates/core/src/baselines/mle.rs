//! Full-solution maximum likelihood: solve the model at every data point for each
//! trial `theta`.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{PseError, Result};
use crate::models::{
    entry_solve_equilibrium, monopoly_solve, EntryDataset, EntryTheta, MonopolyDataset,
};
use crate::numopt::{fd_jacobian, newton_maximize, symmetrize, ObjectiveEval, Order};
use crate::pse::{standard_errors, Algorithm, EstimateOptions, EstimateResult};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const EQUILIBRIUM_TOL: f64 = 1e-12;

/// A data set whose likelihood can be computed by solving the model exactly.
pub trait ExactlySolvable {
    fn theta_names(&self) -> Vec<String>;

    /// Log-likelihood and its analytic gradient in `theta`.
    fn loglik_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// Log-likelihood Hessian; by default central differences of the gradient.
    fn loglik_hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_loglik_hessian(self, theta)
    }
}

/// Central differences of the analytic gradient with step `1e-5 (1 + |theta_i|)`.
pub fn fd_loglik_hessian<E: ExactlySolvable + ?Sized>(model: &E, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let steps: Vec<f64> = theta.iter().map(|t| 1e-5 * (1.0 + t.abs())).collect();
    let jac = fd_jacobian(|t| model.loglik_gradient(t).map(|(_, g)| g), theta, &steps)?;
    Ok(symmetrize(&jac))
}

impl ExactlySolvable for MonopolyDataset {
    fn theta_names(&self) -> Vec<String> {
        vec!["theta".to_string()]
    }

    fn loglik_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if theta.len() != 1 {
            return Err(PseError::dims("theta", 1, theta.len()));
        }
        let t = theta[0];
        let (mut ll, mut g) = (0.0, 0.0);
        for r in self.records() {
            let p = monopoly_solve(r.x, t)?;
            // p e^p = theta x, so dp/dtheta = x / (e^p (1 + p)).
            let dp = r.x * (-p).exp() / (1.0 + p);
            let e = r.y - p;
            ll -= 0.5 * e * e + HALF_LN_2PI;
            g += e * dp;
        }
        Ok((ll, DVector::from_element(1, g)))
    }

    fn loglik_hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if theta.len() != 1 {
            return Err(PseError::dims("theta", 1, theta.len()));
        }
        let t = theta[0];
        let mut h = 0.0;
        for r in self.records() {
            let p = monopoly_solve(r.x, t)?;
            let dp = r.x * (-p).exp() / (1.0 + p);
            let d2p = -dp * dp * (2.0 + p) / (1.0 + p);
            h += (r.y - p) * d2p - dp * dp;
        }
        Ok(DMatrix::from_element(1, 1, h))
    }
}

fn ln_prob(d: u8, p: f64) -> f64 {
    if d == 1 {
        p.max(f64::MIN_POSITIVE).ln()
    } else {
        (1.0 - p).max(f64::MIN_POSITIVE).ln()
    }
}

/// `d/dp` of the Bernoulli log-probability.
fn score_prob(d: u8, p: f64) -> f64 {
    if d == 1 {
        1.0 / p
    } else {
        -1.0 / (1.0 - p)
    }
}

impl ExactlySolvable for EntryDataset {
    fn theta_names(&self) -> Vec<String> {
        EntryTheta::NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// The selected equilibrium is differentiated through the implicit function
    /// theorem: `dp/dtheta = (I - dPsi/dp)^-1 dPsi/dtheta`.
    fn loglik_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let th = EntryTheta::from_slice(theta.as_slice())?;
        let mut ll = 0.0;
        let mut g = DVector::zeros(5);
        for r in self.records() {
            let (pw, pk) = entry_solve_equilibrium(r.x, &th, EQUILIBRIUM_TOL)?;
            let (sw, sk) = (pw * (1.0 - pw), pk * (1.0 - pk));
            let a = Matrix2::new(1.0, th.delta_w * sw, th.delta_k * sk, 1.0);
            let a_inv = a.try_inverse().ok_or_else(|| {
                PseError::NoConvergence(format!("equilibrium at x = {} is not locally unique", r.x))
            })?;
            let psi_theta = nalgebra::Matrix2x5::new(
                sw, -pk * sw, 0.0, 0.0, r.x * sw, //
                0.0, 0.0, sk, -pw * sk, r.x * sk,
            );
            let dp = a_inv * psi_theta;
            ll += ln_prob(r.d_w, pw) + ln_prob(r.d_k, pk);
            let (cw, ck) = (score_prob(r.d_w, pw), score_prob(r.d_k, pk));
            for j in 0..5 {
                g[j] += cw * dp[(0, j)] + ck * dp[(1, j)];
            }
        }
        Ok((ll, g))
    }
}

/// Newton on `theta` with every likelihood evaluation solving the model; standard
/// errors from the finite-difference Hessian of the log-likelihood.
pub fn mle_estimate<E: ExactlySolvable + ?Sized>(
    model: &E,
    theta_init: &DVector<f64>,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    let res = newton_maximize(
        |t: &DVector<f64>, order: Order| {
            if !order.wants_gradient() {
                return Ok(ObjectiveEval::value_only(model.loglik_gradient(t)?.0));
            }
            let (v, g) = model.loglik_gradient(t)?;
            let h = if order.wants_hessian() {
                Some(model.loglik_hessian(t)?)
            } else {
                None
            };
            Ok(ObjectiveEval::new(v, g, h))
        },
        theta_init,
        &opts.newton,
    )?;
    if !res.converged {
        log::warn!("MLE stopped without converging ({:?})", res.stop);
    }
    let hess = fd_loglik_hessian(model, &res.argmax)?;
    let se = standard_errors(&hess);
    Ok(EstimateResult::new(
        Algorithm::Mle,
        model.theta_names(),
        &res.argmax,
        &DVector::zeros(0),
        &se,
        opts.alpha,
        res.value,
        0.0,
        None,
    )
    .with_diagnostics(res.converged, res.iterations, res.gradient_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{lambert_w, EntryRecord, MonopolyRecord};

    fn monopoly(points: &[(f64, f64)]) -> MonopolyDataset {
        MonopolyDataset::new(points.iter().map(|&(x, y)| MonopolyRecord { x, y }).collect()).unwrap()
    }

    #[test]
    fn noiseless_monopoly_recovers_theta() {
        let data = monopoly(
            &(1..=50)
                .map(|i| {
                    let x = i as f64 / 50.0;
                    (x, lambert_w(1.3 * x).unwrap())
                })
                .collect::<Vec<_>>(),
        );
        let est = mle_estimate(&data, &DVector::from_element(1, 1.0), &EstimateOptions::default()).unwrap();
        assert!((est.theta_hat[0] - 1.3).abs() < 1e-6);
        assert!(est.std_errors[0] > 0.0);
    }

    #[test]
    fn single_observation_inverts_first_order_condition() {
        let (x, y) = (0.7, 0.4);
        let est = mle_estimate(&monopoly(&[(x, y)]), &DVector::from_element(1, 1.0), &EstimateOptions::default()).unwrap();
        assert!((est.theta_hat[0] - y * y.exp() / x).abs() < 1e-8);
    }

    #[test]
    fn monopoly_hessian_matches_differences() {
        let data = monopoly(&[(0.2, 0.5), (0.9, -0.3), (0.5, 1.1)]);
        let t = DVector::from_element(1, 0.8);
        let a = data.loglik_hessian(&t).unwrap();
        let f = fd_loglik_hessian(&data, &t).unwrap();
        assert!((a[(0, 0)] - f[(0, 0)]).abs() < 1e-6 * (1.0 + a[(0, 0)].abs()));
    }

    #[test]
    fn entry_gradient_matches_differences() {
        let recs = (0..30)
            .map(|i| EntryRecord {
                d_w: (i % 2) as u8,
                d_k: (i % 3 == 0) as u8,
                x: 7.5 + 0.1 * i as f64,
            })
            .collect();
        let data = EntryDataset::new(recs).unwrap();
        let theta = DVector::from_vec(vec![-20.0, 0.6, -23.0, -1.5, 2.5]);
        let (_, g) = data.loglik_gradient(&theta).unwrap();
        for j in 0..5 {
            let h = 1e-6 * (1.0 + theta[j].abs());
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (data.loglik_gradient(&tp).unwrap().0 - data.loglik_gradient(&tm).unwrap().0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-5 * (1.0 + g[j].abs()), "component {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn permutation_does_not_change_estimate() {
        let pts = [(0.1, 0.3), (0.5, 0.2), (0.9, 0.8), (0.3, -0.1)];
        let mut rev = pts;
        rev.reverse();
        let o = EstimateOptions::default();
        let a = mle_estimate(&monopoly(&pts), &DVector::from_element(1, 1.0), &o).unwrap();
        let b = mle_estimate(&monopoly(&rev), &DVector::from_element(1, 1.0), &o).unwrap();
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-12);
    }
}
