//! Monopoly pricing with logit demand. With zero cost, unit price sensitivity and
//! quality `log x + log theta + 1`, the normalized optimal price solves
//! `p e^p = theta x`, i.e. `p = W(theta x)`. Observed prices carry standard normal
//! measurement error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    lambert_w, weighted_gram, weighted_sum, ConstrainedModel, ModelDerivatives, PenaltyGrid,
    StructuralModel,
};
use crate::error::{PseError, Result};
use crate::sieve::{KnotGrid, Link, SieveSpec, EXP_GUARD};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Optimal normalized price `W(theta x)`.
pub fn monopoly_solve(x: f64, theta: f64) -> Result<f64> {
    if !(x > 0.0) || !(theta > 0.0) {
        return Err(PseError::DomainError(format!(
            "monopoly_solve needs x > 0 and theta > 0, got x = {x}, theta = {theta}"
        )));
    }
    lambert_w(theta * x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonopolyRecord {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonopolyDataset {
    records: Vec<MonopolyRecord>,
}

impl MonopolyDataset {
    pub fn new(records: Vec<MonopolyRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(PseError::TooFewPoints { needed: 1, got: 0 });
        }
        if let Some(r) = records.iter().find(|r| !(r.x > 0.0) || !r.y.is_finite()) {
            return Err(PseError::DomainError(format!(
                "monopoly records need x > 0 and finite y, got ({}, {})",
                r.x, r.y
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[MonopolyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// `(min x, max x)`.
    pub fn x_range(&self) -> (f64, f64) {
        self.records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.x), hi.max(r.x))
            })
    }
}

/// Penalized sieve formulation of the monopoly model: the price function is
/// `p(x) = sum_k beta_k s_k(x)` and the penalty is
/// `sum_l [p(x_l) e^{p(x_l)} - theta x_l]^2` over a grid.
#[derive(Clone, Debug)]
pub struct MonopolyModel {
    spec: SieveSpec,
    ys: DVector<f64>,
    data_basis: DMatrix<f64>,
    data_gram: DMatrix<f64>,
    grid: PenaltyGrid,
    grid_basis: DMatrix<f64>,
}

impl MonopolyModel {
    pub fn new(data: &MonopolyDataset, spec: SieveSpec, grid: PenaltyGrid) -> Result<Self> {
        if spec.link != Link::Identity {
            return Err(PseError::Config(
                "the monopoly model uses the identity-link sieve".into(),
            ));
        }
        let k = spec.k();
        grid.validate(spec.grid.lo(), spec.grid.hi(), k)?;
        let data_basis = spec.grid.basis_matrix(&data.xs())?;
        let data_gram = data_basis.tr_mul(&data_basis);
        let grid_basis = spec.grid.basis_matrix(grid.points())?;
        Ok(Self {
            spec,
            ys: DVector::from_vec(data.ys()),
            data_basis,
            data_gram,
            grid,
            grid_basis,
        })
    }

    /// Sieve with `k` basis functions on the observed covariate range and an
    /// equally spaced penalty grid of `grid_len` points.
    pub fn with_basis_count(data: &MonopolyDataset, k: usize, grid_len: usize) -> Result<Self> {
        let (lo, hi) = data.x_range();
        let spec = SieveSpec::with_basis_count(lo, hi, k, Link::Identity)?;
        let grid = PenaltyGrid::uniform(lo, hi, grid_len)?;
        Self::new(data, spec, grid)
    }

    pub fn spec(&self) -> &SieveSpec {
        &self.spec
    }

    pub fn grid(&self) -> &PenaltyGrid {
        &self.grid
    }

    pub fn knots(&self) -> &KnotGrid {
        &self.spec.grid
    }

    /// Sieve prices at the observed covariates.
    pub fn fitted_prices(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.beta_dim() {
            return Err(PseError::dims("beta", self.beta_dim(), beta.len()));
        }
        Ok(&self.data_basis * beta)
    }

    /// Starting value for `theta`: the penalty is quadratic in `theta` and is
    /// minimized at `sum x p e^p / sum x^2` over the grid.
    pub fn preliminary_theta(&self, beta: &DVector<f64>) -> Result<f64> {
        let (p, e, _) = self.residual_terms(beta, 0.0)?;
        let xs = self.grid.points();
        let num: f64 = xs.iter().zip(p.iter().zip(&e)).map(|(x, (p, e))| x * p * e).sum();
        let den: f64 = xs.iter().map(|x| x * x).sum();
        Ok(num / den)
    }

    fn residual_terms(&self, beta: &DVector<f64>, theta: f64) -> Result<(DVector<f64>, Vec<f64>, Vec<f64>)> {
        let p = &self.grid_basis * beta;
        if let Some(v) = p.iter().find(|v| !(v.abs() <= EXP_GUARD)) {
            return Err(PseError::NonFiniteObjective(format!(
                "sieve price {v} overflows the exponential"
            )));
        }
        let e: Vec<f64> = p.iter().map(|v| v.exp()).collect();
        let r: Vec<f64> = p
            .iter()
            .zip(&e)
            .zip(self.grid.points())
            .map(|((p, e), x)| p * e - theta * x)
            .collect();
        Ok((p, e, r))
    }

    fn loglik_value(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let resid = &self.ys - &self.data_basis * beta;
        let ll = -0.5 * resid.norm_squared() - HALF_LN_2PI * resid.len() as f64;
        (ll, resid)
    }
}

impl StructuralModel for MonopolyModel {
    fn beta_dim(&self) -> usize {
        self.spec.k()
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn theta_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn evaluate(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<ModelDerivatives> {
        self.check_dims(beta, theta)?;
        let th = theta[0];
        let k = self.beta_dim();
        let mut d = ModelDerivatives::zeros(k, 1);

        let (ll, resid) = self.loglik_value(beta);
        d.loglik = ll;
        d.loglik_grad_beta = self.data_basis.tr_mul(&resid);
        d.loglik_hess_beta = -&self.data_gram;

        let (p, e, r) = self.residual_terms(beta, th)?;
        let xs = self.grid.points();
        let len = xs.len();
        let mut w_grad = Vec::with_capacity(len);
        let mut w_hess = Vec::with_capacity(len);
        let mut w_cross = Vec::with_capacity(len);
        for l in 0..len {
            let slope = e[l] * (1.0 + p[l]);
            w_grad.push(2.0 * r[l] * slope);
            w_hess.push(2.0 * (slope * slope + r[l] * e[l] * (2.0 + p[l])));
            w_cross.push(-2.0 * xs[l] * slope);
        }
        d.penalty = r.iter().map(|v| v * v).sum();
        d.penalty_grad_beta = weighted_sum(&self.grid_basis, &w_grad);
        d.penalty_hess_beta = weighted_gram(&self.grid_basis, &w_hess);
        d.penalty_cross_beta_theta = DMatrix::from_column_slice(k, 1, weighted_sum(&self.grid_basis, &w_cross).as_slice());
        d.penalty_grad_theta[0] = -2.0 * r.iter().zip(xs).map(|(r, x)| r * x).sum::<f64>();
        d.penalty_hess_theta[(0, 0)] = 2.0 * xs.iter().map(|x| x * x).sum::<f64>();
        Ok(d)
    }

    fn values(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64)> {
        self.check_dims(beta, theta)?;
        let (ll, _) = self.loglik_value(beta);
        let (_, _, r) = self.residual_terms(beta, theta[0])?;
        Ok((ll, r.iter().map(|v| v * v).sum()))
    }
}

/// Monopoly model on a finite set of covariate values where the "sieve" is the price
/// vector itself: `beta_k = p(x_k)` for each distinct `x_k`. The equilibrium
/// residual `g_k = beta_k e^{beta_k} - theta x_k` is both the penalty term and the
/// hard constraint of the MPEC formulation.
#[derive(Clone, Debug)]
pub struct DiscreteMonopolyModel {
    support: Vec<f64>,
    /// Number of observations and sum of `y` at each support point.
    counts: Vec<f64>,
    sums: Vec<f64>,
    sum_sq: f64,
    n: usize,
}

impl DiscreteMonopolyModel {
    pub fn new(data: &MonopolyDataset) -> Result<Self> {
        let mut support: Vec<f64> = data.xs();
        support.sort_by(f64::total_cmp);
        support.dedup();
        let mut counts = vec![0.0; support.len()];
        let mut sums = vec![0.0; support.len()];
        for r in data.records() {
            let k = support
                .binary_search_by(|s| s.total_cmp(&r.x))
                .expect("record covariate is in the support");
            counts[k] += 1.0;
            sums[k] += r.y;
        }
        Ok(Self {
            support,
            counts,
            sums,
            sum_sq: data.records().iter().map(|r| r.y * r.y).sum(),
            n: data.len(),
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Cell means, the unpenalized fit.
    pub fn cell_means(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.support.len(),
            self.sums.iter().zip(&self.counts).map(|(s, c)| s / c),
        )
    }

    pub(crate) fn loglik(&self, p: &DVector<f64>) -> f64 {
        // sum_j (y_j - p_k)^2 = sum y^2 - 2 sum_k p_k S_k + sum_k n_k p_k^2
        let mut ss = self.sum_sq;
        for k in 0..p.len() {
            ss += -2.0 * p[k] * self.sums[k] + self.counts[k] * p[k] * p[k];
        }
        -0.5 * ss - HALF_LN_2PI * self.n as f64
    }

    pub(crate) fn loglik_grad(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            p.len(),
            (0..p.len()).map(|k| self.sums[k] - self.counts[k] * p[k]),
        )
    }

    pub(crate) fn loglik_hess(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.counts.len(),
            self.counts.iter().map(|c| -c),
        ))
    }

    /// Residuals `g_k`, `dg_k/dp_k`, `d^2 g_k/dp_k^2`.
    pub(crate) fn constraint_terms(&self, p: &DVector<f64>, theta: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut g = Vec::with_capacity(p.len());
        let mut dg = Vec::with_capacity(p.len());
        let mut d2g = Vec::with_capacity(p.len());
        for (k, &x) in self.support.iter().enumerate() {
            if !(p[k].abs() <= EXP_GUARD) {
                return Err(PseError::NonFiniteObjective(format!(
                    "price {} overflows the exponential",
                    p[k]
                )));
            }
            let e = p[k].exp();
            g.push(p[k] * e - theta * x);
            dg.push(e * (1.0 + p[k]));
            d2g.push(e * (2.0 + p[k]));
        }
        Ok((g, dg, d2g))
    }
}

impl StructuralModel for DiscreteMonopolyModel {
    fn beta_dim(&self) -> usize {
        self.support.len()
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn theta_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn evaluate(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<ModelDerivatives> {
        self.check_dims(beta, theta)?;
        let k = self.beta_dim();
        let mut d = ModelDerivatives::zeros(k, 1);
        d.loglik = self.loglik(beta);
        d.loglik_grad_beta = self.loglik_grad(beta);
        d.loglik_hess_beta = self.loglik_hess();
        let (g, dg, d2g) = self.constraint_terms(beta, theta[0])?;
        for i in 0..k {
            let x = self.support[i];
            d.penalty += g[i] * g[i];
            d.penalty_grad_beta[i] = 2.0 * g[i] * dg[i];
            d.penalty_hess_beta[(i, i)] = 2.0 * (dg[i] * dg[i] + g[i] * d2g[i]);
            d.penalty_cross_beta_theta[(i, 0)] = -2.0 * x * dg[i];
            d.penalty_grad_theta[0] += -2.0 * g[i] * x;
            d.penalty_hess_theta[(0, 0)] += 2.0 * x * x;
        }
        Ok(d)
    }

    fn beta_start(&self) -> DVector<f64> {
        self.cell_means()
    }
}

impl ConstrainedModel for DiscreteMonopolyModel {
    fn constraint_dim(&self) -> usize {
        self.support.len()
    }

    fn constraints(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        self.check_dims(beta, theta)?;
        let (g, dg, _) = self.constraint_terms(beta, theta[0])?;
        let k = g.len();
        let jac_theta = DMatrix::from_iterator(k, 1, self.support.iter().map(|x| -x));
        Ok((
            DVector::from_vec(g),
            DMatrix::from_diagonal(&DVector::from_vec(dg)),
            jac_theta,
        ))
    }

    fn weighted_constraint_hessian(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_dims(beta, theta)?;
        let (_, _, d2g) = self.constraint_terms(beta, theta[0])?;
        let k = d2g.len();
        let mut h = DMatrix::zeros(k + 1, k + 1);
        for i in 0..k {
            h[(i, i)] = weights[i] * d2g[i];
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numopt::{check_gradient, check_jacobian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn dataset(n: usize, seed: u64) -> MonopolyDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x = 1.0 - rng.random::<f64>();
                MonopolyRecord {
                    x,
                    y: lambert_w(x).unwrap() + rng.random_range(-0.5..0.5),
                }
            })
            .collect();
        MonopolyDataset::new(recs).unwrap()
    }

    #[test]
    fn solve_values() {
        assert!((monopoly_solve(1.0, E).unwrap() - 1.0).abs() < 1e-15);
        for &(x, t) in &[(0.3, 0.8), (2.0, 1.7), (0.01, 5.0)] {
            let y = monopoly_solve(x, t).unwrap();
            assert!((y * y.exp() - t * x).abs() < 1e-12);
        }
        assert!(monopoly_solve(1.0, 1e-12).unwrap() < 1e-11);
        assert!(monopoly_solve(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_beta_zero_theta_has_no_penalty() {
        let m = MonopolyModel::with_basis_count(&dataset(50, 1), 6, 200).unwrap();
        let d = m
            .evaluate(&DVector::zeros(6), &DVector::from_element(1, 0.0))
            .unwrap();
        assert_eq!(d.penalty, 0.0);
    }

    #[test]
    fn zero_residual_loglik() {
        let base = dataset(40, 2);
        let beta = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05, 0.4, 0.2]);
        let (lo, hi) = base.x_range();
        let spec = SieveSpec::with_basis_count(lo, hi, 6, Link::Identity).unwrap();
        let recs = base
            .records()
            .iter()
            .map(|r| MonopolyRecord {
                x: r.x,
                y: crate::sieve::eval_sieve(&spec, &beta, r.x).unwrap(),
            })
            .collect();
        let data = MonopolyDataset::new(recs).unwrap();
        let m = MonopolyModel::with_basis_count(&data, 6, 100).unwrap();
        let d = m.evaluate(&beta, &DVector::from_element(1, 1.0)).unwrap();
        let expected = -(40.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((d.loglik - expected).abs() < 1e-10);
    }

    #[test]
    fn derivative_blocks_match_finite_differences() {
        let data = dataset(80, 3);
        let m = MonopolyModel::with_basis_count(&data, 6, 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..10 {
            let beta = DVector::from_fn(6, |_, _| rng.random_range(-0.6..0.6));
            let theta = DVector::from_element(1, rng.random_range(0.3..2.0));
            let d = m.evaluate(&beta, &theta).unwrap();
            let th = theta.clone();
            let e = check_gradient(|b| Ok(m.evaluate(b, &th)?.penalty), |_| Ok(d.penalty_grad_beta.clone()), &beta, h).unwrap();
            assert!(e < 1e-5, "penalty grad beta {e}");
            let e = check_gradient(|b| Ok(m.evaluate(b, &th)?.loglik), |_| Ok(d.loglik_grad_beta.clone()), &beta, h).unwrap();
            assert!(e < 1e-5, "loglik grad beta {e}");
            let e = check_jacobian(|b| Ok(m.evaluate(b, &th)?.penalty_grad_beta), &d.penalty_hess_beta, &beta, h).unwrap();
            assert!(e < 1e-5, "penalty hess beta {e}");
            let e = check_jacobian(|b| Ok(m.evaluate(b, &th)?.loglik_grad_beta), &d.loglik_hess_beta, &beta, h).unwrap();
            assert!(e < 1e-5, "loglik hess beta {e}");
            let b0 = beta.clone();
            let e = check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_beta), &d.penalty_cross_beta_theta, &theta, h).unwrap();
            assert!(e < 1e-5, "penalty cross {e}");
            let e = check_gradient(|t| Ok(m.evaluate(&b0, t)?.penalty), |_| Ok(d.penalty_grad_theta.clone()), &theta, h).unwrap();
            assert!(e < 1e-5, "penalty grad theta {e}");
            let e = check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_theta), &d.penalty_hess_theta, &theta, h).unwrap();
            assert!(e < 1e-5, "penalty hess theta {e}");
            let (ll, pen) = m.values(&beta, &theta).unwrap();
            assert_eq!(ll, d.loglik);
            assert!((pen - d.penalty).abs() <= 1e-12 * (1.0 + pen));
        }
    }

    #[test]
    fn penalty_vanishes_only_at_the_equilibrium() {
        // theta = 1 and n = 0 interior knots: fit a cubic to W on [0.05, 0.07] where
        // the approximation error is below 1e-8
        let recs = (0..30)
            .map(|i| MonopolyRecord {
                x: 0.05 + 0.02 * i as f64 / 29.0,
                y: 0.0,
            })
            .collect();
        let data = MonopolyDataset::new(recs).unwrap();
        let m = MonopolyModel::with_basis_count(&data, 4, 200).unwrap();
        let xs = m.grid().points().to_vec();
        let s = m.knots().basis_matrix(&xs).unwrap();
        let w = DVector::from_iterator(xs.len(), xs.iter().map(|&x| lambert_w(x).unwrap()));
        let beta = s.clone().svd(true, true).solve(&w, 1e-15).unwrap();
        let fit_err = (&s * &beta - &w).amax();
        assert!(fit_err < 1e-8, "cubic fit error {fit_err}");
        let at_eq = m.evaluate(&beta, &DVector::from_element(1, 1.0)).unwrap();
        assert!(at_eq.penalty < 1e-14, "penalty {}", at_eq.penalty);
        let mut off = beta.clone();
        off[3] += 1e-3;
        assert!(m.evaluate(&off, &DVector::from_element(1, 1.0)).unwrap().penalty > 1e-8);
    }

    #[test]
    fn discrete_model_blocks() {
        let data = dataset(30, 5);
        let recs: Vec<_> = data
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| MonopolyRecord { x: [0.5, 1.0, 1.5][i % 3], y: r.y })
            .collect();
        let m = DiscreteMonopolyModel::new(&MonopolyDataset::new(recs).unwrap()).unwrap();
        assert_eq!(m.beta_dim(), 3);
        let beta = DVector::from_vec(vec![0.3, 0.5, 0.7]);
        let theta = DVector::from_element(1, 1.2);
        let d = m.evaluate(&beta, &theta).unwrap();
        let th = theta.clone();
        let e = check_gradient(|b| Ok(m.evaluate(b, &th)?.loglik), |_| Ok(d.loglik_grad_beta.clone()), &beta, 1e-6).unwrap();
        assert!(e < 1e-6);
        let e = check_jacobian(|b| Ok(m.evaluate(b, &th)?.penalty_grad_beta), &d.penalty_hess_beta, &beta, 1e-6).unwrap();
        assert!(e < 1e-6);
        let b0 = beta.clone();
        let e = check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_beta), &d.penalty_cross_beta_theta, &theta, 1e-6).unwrap();
        assert!(e < 1e-6);
    }
}
