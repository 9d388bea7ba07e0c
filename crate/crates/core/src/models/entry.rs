//! Static entry game with incomplete information between two chains. Firm `j`
//! enters with probability `logistic(pi_j + gamma x - p_{-j} delta_j)` given the
//! rival's entry probability, and equilibrium choice probabilities are a fixed
//! point of the pair of best responses.

use nalgebra::{DMatrix, DVector, SVector};
use serde::{Deserialize, Serialize};

use super::{
    weighted_gram, weighted_sum, ConstrainedModel, ModelDerivatives, PenaltyGrid, StructuralModel,
};
use crate::error::{PseError, Result};
use crate::sieve::{logistic_sieve_value, Link, SieveSpec, EXP_GUARD};

const PROB_CLAMP: f64 = 1e-12;
const MAX_FIXED_POINT_ITER: usize = 10_000;
const DAMPING: f64 = 0.5;

type Vec5 = SVector<f64, 5>;

/// `1 / (1 + exp(-u))`.
pub fn logistic(u: f64) -> f64 {
    let u = u.clamp(-EXP_GUARD, EXP_GUARD);
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Firm {
    W,
    K,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryTheta {
    pub pi_w: f64,
    pub delta_w: f64,
    pub pi_k: f64,
    pub delta_k: f64,
    pub gamma: f64,
}

impl EntryTheta {
    pub const NAMES: [&'static str; 5] = ["pi_w", "delta_w", "pi_k", "delta_k", "gamma"];

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.to_array())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.pi_w, self.delta_w, self.pi_k, self.delta_k, self.gamma]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 5 {
            return Err(PseError::dims("entry theta", 5, v.len()));
        }
        let t = Self {
            pi_w: v[0],
            delta_w: v[1],
            pi_k: v[2],
            delta_k: v[3],
            gamma: v[4],
        };
        if !t.is_finite() {
            return Err(PseError::DomainError(format!("entry theta not finite: {v:?}")));
        }
        Ok(t)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Best response of `firm` to the rival entry probability `p_opponent`.
pub fn entry_best_response(p_opponent: f64, x: f64, theta: &EntryTheta, firm: Firm) -> f64 {
    match firm {
        Firm::W => logistic(theta.pi_w + theta.gamma * x - p_opponent * theta.delta_w),
        Firm::K => logistic(theta.pi_k + theta.gamma * x - p_opponent * theta.delta_k),
    }
}

fn equilibrium_residual(p: (f64, f64), x: f64, theta: &EntryTheta) -> (f64, f64) {
    (
        p.0 - entry_best_response(p.1, x, theta, Firm::W),
        p.1 - entry_best_response(p.0, x, theta, Firm::K),
    )
}

/// Equilibrium `(p_W, p_K)` at covariate `x`: damped best-response iteration from
/// `(0.5, 0.5)` until the residual is below `tol`, followed by Newton polishing on
/// the two-equation system. The limit of the damped iteration is the selected
/// equilibrium when several exist.
pub fn entry_solve_equilibrium(x: f64, theta: &EntryTheta, tol: f64) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(PseError::DomainError(format!("tolerance must be positive, got {tol}")));
    }
    if !x.is_finite() || !theta.is_finite() {
        return Err(PseError::DomainError("equilibrium inputs not finite".into()));
    }
    let mut p = (0.5, 0.5);
    let mut converged = false;
    for _ in 0..MAX_FIXED_POINT_ITER {
        let psi = (
            entry_best_response(p.1, x, theta, Firm::W),
            entry_best_response(p.0, x, theta, Firm::K),
        );
        if (p.0 - psi.0).abs().max((p.1 - psi.1).abs()) <= tol {
            converged = true;
            break;
        }
        p = (
            (1.0 - DAMPING) * p.0 + DAMPING * psi.0,
            (1.0 - DAMPING) * p.1 + DAMPING * psi.1,
        );
    }
    if !converged {
        return Err(PseError::NoConvergence(format!(
            "best-response iteration at x = {x} did not settle after {MAX_FIXED_POINT_ITER} steps"
        )));
    }
    let mut res = equilibrium_residual(p, x, theta);
    for _ in 0..20 {
        let norm = res.0.abs().max(res.1.abs());
        if norm <= 1e-15 {
            break;
        }
        let psi_w = entry_best_response(p.1, x, theta, Firm::W);
        let psi_k = entry_best_response(p.0, x, theta, Firm::K);
        // d psi_w / d p_k and d psi_k / d p_w
        let dw = -psi_w * (1.0 - psi_w) * theta.delta_w;
        let dk = -psi_k * (1.0 - psi_k) * theta.delta_k;
        let det = 1.0 - dw * dk;
        if det.abs() < 1e-14 {
            break;
        }
        let step = ((res.0 + dw * res.1) / det, (res.1 + dk * res.0) / det);
        let next = (p.0 - step.0, p.1 - step.1);
        let next_res = equilibrium_residual(next, x, theta);
        if next_res.0.abs().max(next_res.1.abs()) >= norm {
            break;
        }
        p = next;
        res = next_res;
    }
    let norm = res.0.abs().max(res.1.abs());
    if norm > 1e-12_f64.max(tol) {
        return Err(PseError::NoConvergence(format!(
            "equilibrium residual {norm:e} at x = {x}"
        )));
    }
    Ok(p)
}

/// One market: entry indicators of both firms and sales per capita.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    #[serde(rename = "walmart")]
    pub d_w: u8,
    #[serde(rename = "kmart")]
    pub d_k: u8,
    #[serde(rename = "spc")]
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryDataset {
    records: Vec<EntryRecord>,
}

impl EntryDataset {
    pub fn new(records: Vec<EntryRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(PseError::TooFewPoints { needed: 1, got: 0 });
        }
        if let Some(r) = records
            .iter()
            .find(|r| r.d_w > 1 || r.d_k > 1 || !r.x.is_finite())
        {
            return Err(PseError::DomainError(format!(
                "entry indicators must be 0 or 1 and x finite, got ({}, {}, {})",
                r.d_w, r.d_k, r.x
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[EntryRecord] {
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

    pub fn x_range(&self) -> (f64, f64) {
        self.records
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.x), hi.max(r.x))
            })
    }

    /// Entry frequencies `(mean d_W, mean d_K)`.
    pub fn entry_rates(&self) -> (f64, f64) {
        let n = self.records.len() as f64;
        let (w, k) = self
            .records
            .iter()
            .fold((0.0, 0.0), |(w, k), r| (w + r.d_w as f64, k + r.d_k as f64));
        (w / n, k / n)
    }
}

/// Sieve choice probabilities next to the implied best responses at one covariate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitCurveRow {
    pub x: f64,
    pub p_w: f64,
    pub p_k: f64,
    pub psi_w: f64,
    pub psi_k: f64,
}

/// Everything the penalty needs at one point given `(p_W, p_K)` and `theta`.
struct PenaltyPoint {
    r_w: f64,
    r_k: f64,
    psi_w: f64,
    psi_k: f64,
    a_w: f64,
    a_k: f64,
    /// `d psi_W / d p_K` and `d psi_K / d p_W`.
    dpsi_w: f64,
    dpsi_k: f64,
    grad_u_w: Vec5,
    grad_u_k: Vec5,
}

impl PenaltyPoint {
    fn new(p_w: f64, p_k: f64, x: f64, t: &EntryTheta) -> Self {
        let psi_w = entry_best_response(p_k, x, t, Firm::W);
        let psi_k = entry_best_response(p_w, x, t, Firm::K);
        let a_w = psi_w * (1.0 - psi_w);
        let a_k = psi_k * (1.0 - psi_k);
        Self {
            r_w: p_w - psi_w,
            r_k: p_k - psi_k,
            psi_w,
            psi_k,
            a_w,
            a_k,
            dpsi_w: -a_w * t.delta_w,
            dpsi_k: -a_k * t.delta_k,
            grad_u_w: Vec5::new(1.0, -p_k, 0.0, 0.0, x),
            grad_u_k: Vec5::new(0.0, 0.0, 1.0, -p_w, x),
        }
    }

    fn value(&self) -> f64 {
        self.r_w * self.r_w + self.r_k * self.r_k
    }

    /// Half of `d rho / d p_W` and `d rho / d p_K`.
    fn m1(&self) -> (f64, f64) {
        (
            self.r_w - self.r_k * self.dpsi_k,
            self.r_k - self.r_w * self.dpsi_w,
        )
    }

    /// Half of the second derivatives `(p_W p_W, p_K p_K, p_W p_K)`.
    fn m2(&self, t: &EntryTheta) -> (f64, f64, f64) {
        let ww = 1.0
            + self.dpsi_k * self.dpsi_k
            + self.r_k * (1.0 - 2.0 * self.psi_k) * self.dpsi_k * t.delta_k;
        let kk = 1.0
            + self.dpsi_w * self.dpsi_w
            + self.r_w * (1.0 - 2.0 * self.psi_w) * self.dpsi_w * t.delta_w;
        (ww, kk, -self.dpsi_w - self.dpsi_k)
    }

    fn grad_psi(&self) -> (Vec5, Vec5) {
        (self.grad_u_w * self.a_w, self.grad_u_k * self.a_k)
    }

    /// Half of `d rho / d theta`.
    fn half_grad_theta(&self) -> Vec5 {
        let (gw, gk) = self.grad_psi();
        -(gw * self.r_w + gk * self.r_k)
    }

    /// Half of `d^2 rho / d theta^2`.
    fn half_hess_theta(&self) -> nalgebra::SMatrix<f64, 5, 5> {
        let (gw, gk) = self.grad_psi();
        let cw = self.r_w * self.a_w * (1.0 - 2.0 * self.psi_w);
        let ck = self.r_k * self.a_k * (1.0 - 2.0 * self.psi_k);
        gw * gw.transpose() + gk * gk.transpose()
            - self.grad_u_w * self.grad_u_w.transpose() * cw
            - self.grad_u_k * self.grad_u_k.transpose() * ck
    }

    /// Half of `d^2 rho / d p_W d theta` and `d^2 rho / d p_K d theta`.
    fn half_cross(&self) -> (Vec5, Vec5) {
        let (gw, gk) = self.grad_psi();
        let mut d_dpsi_w = self.grad_u_w * ((1.0 - 2.0 * self.psi_w) * self.dpsi_w);
        d_dpsi_w[1] -= self.a_w;
        let mut d_dpsi_k = self.grad_u_k * ((1.0 - 2.0 * self.psi_k) * self.dpsi_k);
        d_dpsi_k[3] -= self.a_k;
        (
            -gw + gk * self.dpsi_k - d_dpsi_k * self.r_k,
            -gk + gw * self.dpsi_w - d_dpsi_w * self.r_w,
        )
    }
}

fn ln_clamped(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Entry game with each firm's choice probability approximated by a logistic
/// sieve, `p_j(x) = 1 / (1 + exp(sum_k beta_jk s_k(x)))`, and
/// `beta = (beta_W, beta_K)`.
#[derive(Clone, Debug)]
pub struct EntryModel {
    spec: SieveSpec,
    d_w: Vec<f64>,
    d_k: Vec<f64>,
    data_basis: DMatrix<f64>,
    grid: PenaltyGrid,
    grid_basis: DMatrix<f64>,
}

impl EntryModel {
    pub fn new(data: &EntryDataset, spec: SieveSpec, grid: PenaltyGrid) -> Result<Self> {
        if spec.link != Link::Logistic {
            return Err(PseError::Config(
                "the entry model uses the logistic-link sieve".into(),
            ));
        }
        grid.validate(spec.grid.lo(), spec.grid.hi(), spec.k())?;
        let data_basis = spec.grid.basis_matrix(&data.xs())?;
        let grid_basis = spec.grid.basis_matrix(grid.points())?;
        Ok(Self {
            spec,
            d_w: data.records().iter().map(|r| r.d_w as f64).collect(),
            d_k: data.records().iter().map(|r| r.d_k as f64).collect(),
            data_basis,
            grid,
            grid_basis,
        })
    }

    /// Sieve with `k` basis functions on the observed covariate range; the penalty
    /// is summed over the observed markets.
    pub fn with_basis_count(data: &EntryDataset, k: usize) -> Result<Self> {
        let (lo, hi) = data.x_range();
        let spec = SieveSpec::with_basis_count(lo, hi, k, Link::Logistic)?;
        let grid = PenaltyGrid::from_points(data.xs())?;
        Self::new(data, spec, grid)
    }

    /// As [`EntryModel::with_basis_count`] but with an equally spaced penalty grid.
    pub fn with_uniform_grid(data: &EntryDataset, k: usize, grid_len: usize) -> Result<Self> {
        let (lo, hi) = data.x_range();
        let spec = SieveSpec::with_basis_count(lo, hi, k, Link::Logistic)?;
        let grid = PenaltyGrid::uniform(lo, hi, grid_len)?;
        Self::new(data, spec, grid)
    }

    pub fn spec(&self) -> &SieveSpec {
        &self.spec
    }

    pub fn grid(&self) -> &PenaltyGrid {
        &self.grid
    }

    fn split<'a>(&self, beta: &'a DVector<f64>) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        let k = self.spec.k();
        (beta.rows(0, k), beta.rows(k, k))
    }

    fn probabilities(&self, basis: &DMatrix<f64>, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (bw, bk) = self.split(beta);
        (basis * bw, basis * bk)
    }

    fn loglik_value(&self, z_w: &DVector<f64>, z_k: &DVector<f64>) -> f64 {
        let mut ll = 0.0;
        for (z, d) in [(z_w, &self.d_w), (z_k, &self.d_k)] {
            for (zi, di) in z.iter().zip(d) {
                let p = logistic_sieve_value(*zi);
                let q = logistic_sieve_value(-zi);
                ll += di * ln_clamped(p) + (1.0 - di) * ln_clamped(q);
            }
        }
        ll
    }

    /// Choice probabilities and best responses at arbitrary covariates.
    pub fn fit_curve(&self, beta: &DVector<f64>, theta: &EntryTheta, xs: &[f64]) -> Result<Vec<FitCurveRow>> {
        if beta.len() != self.beta_dim() {
            return Err(PseError::dims("beta", self.beta_dim(), beta.len()));
        }
        let basis = self.spec.grid.basis_matrix(xs)?;
        let (z_w, z_k) = self.probabilities(&basis, beta);
        Ok(xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let p_w = logistic_sieve_value(z_w[i]);
                let p_k = logistic_sieve_value(z_k[i]);
                FitCurveRow {
                    x,
                    p_w,
                    p_k,
                    psi_w: entry_best_response(p_k, x, theta, Firm::W),
                    psi_k: entry_best_response(p_w, x, theta, Firm::K),
                }
            })
            .collect())
    }

    /// Sieve coefficients whose probabilities best match the equilibrium at `theta`:
    /// the equilibrium logits on the penalty grid are projected onto the basis by
    /// least squares. Unlike the unpenalized fit, the result never saturates in
    /// regions where one outcome is rarely observed, so it is a safe start for the
    /// penalized problems.
    pub fn equilibrium_projection(&self, theta: &EntryTheta) -> Result<DVector<f64>> {
        let xs = self.grid.points();
        let k = self.spec.k();
        let mut z = DMatrix::zeros(xs.len(), 2);
        for (i, &x) in xs.iter().enumerate() {
            let (p_w, p_k) = entry_solve_equilibrium(x, theta, 1e-12)?;
            z[(i, 0)] = ((1.0 - p_w) / p_w).ln();
            z[(i, 1)] = ((1.0 - p_k) / p_k).ln();
        }
        let coef = self
            .grid_basis
            .clone()
            .svd(true, true)
            .solve(&z, 1e-12)
            .map_err(|e| PseError::DomainError(format!("equilibrium projection failed: {e}")))?;
        Ok(DVector::from_fn(2 * k, |i, _| coef[(i % k, i / k)]))
    }

    /// Starting value for `theta` from the sieve probabilities: the best-response
    /// index `pi_j + gamma x - p_{-j} delta_j` is linear in `theta`, so regressing the
    /// logit of `p_j^beta` on `(1, -p_{-j}, x)` over the penalty grid gives a
    /// least-squares guess. Rows are weighted by `sqrt(p (1 - p))`, the inverse
    /// standard deviation of an estimated logit, so that near-separated regions of a
    /// rich sieve do not dominate.
    pub fn preliminary_theta(&self, beta: &DVector<f64>) -> Result<EntryTheta> {
        let (z_w, z_k) = self.probabilities(&self.grid_basis, beta);
        let xs = self.grid.points();
        let l = xs.len();
        let mut a = DMatrix::zeros(2 * l, 5);
        let mut b = DVector::zeros(2 * l);
        for i in 0..l {
            let p_w = logistic_sieve_value(z_w[i]);
            let p_k = logistic_sieve_value(z_k[i]);
            let w_w = (p_w * (1.0 - p_w)).sqrt();
            let w_k = (p_k * (1.0 - p_k)).sqrt();
            a[(i, 0)] = w_w;
            a[(i, 1)] = -p_k * w_w;
            a[(i, 4)] = xs[i] * w_w;
            b[i] = -z_w[i] * w_w;
            a[(l + i, 2)] = w_k;
            a[(l + i, 3)] = -p_w * w_k;
            a[(l + i, 4)] = xs[i] * w_k;
            b[l + i] = -z_k[i] * w_k;
        }
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| PseError::DomainError(format!("preliminary regression failed: {e}")))?;
        EntryTheta::from_slice(sol.as_slice())
    }
}

impl StructuralModel for EntryModel {
    fn beta_dim(&self) -> usize {
        2 * self.spec.k()
    }

    fn theta_dim(&self) -> usize {
        5
    }

    fn beta_restart(&self, theta: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let th = EntryTheta::from_slice(theta.as_slice())?;
        self.equilibrium_projection(&th).map(Some)
    }

    fn theta_names(&self) -> Vec<String> {
        EntryTheta::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn evaluate(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<ModelDerivatives> {
        self.check_dims(beta, theta)?;
        let t = EntryTheta::from_slice(theta.as_slice())?;
        let k = self.spec.k();
        let mut d = ModelDerivatives::zeros(2 * k, 5);

        let (z_w, z_k) = self.probabilities(&self.data_basis, beta);
        d.loglik = self.loglik_value(&z_w, &z_k);
        for (f, z, obs) in [(0, &z_w, &self.d_w), (1, &z_k, &self.d_k)] {
            let n = z.len();
            let mut g = Vec::with_capacity(n);
            let mut h = Vec::with_capacity(n);
            for i in 0..n {
                let p = logistic_sieve_value(z[i]);
                g.push(p - obs[i]);
                h.push(-p * (1.0 - p));
            }
            d.loglik_grad_beta
                .rows_mut(f * k, k)
                .copy_from(&weighted_sum(&self.data_basis, &g));
            d.loglik_hess_beta
                .view_mut((f * k, f * k), (k, k))
                .copy_from(&weighted_gram(&self.data_basis, &h));
        }

        let (gz_w, gz_k) = self.probabilities(&self.grid_basis, beta);
        let xs = self.grid.points();
        let l = xs.len();
        let mut gw = Vec::with_capacity(l);
        let mut gk = Vec::with_capacity(l);
        let mut hww = Vec::with_capacity(l);
        let mut hkk = Vec::with_capacity(l);
        let mut hwk = Vec::with_capacity(l);
        let mut cross_w = DMatrix::zeros(l, 5);
        let mut cross_k = DMatrix::zeros(l, 5);
        let mut grad_theta = Vec5::zeros();
        let mut hess_theta = nalgebra::SMatrix::<f64, 5, 5>::zeros();
        for i in 0..l {
            let p_w = logistic_sieve_value(gz_w[i]);
            let p_k = logistic_sieve_value(gz_k[i]);
            let q_w = -p_w * (1.0 - p_w);
            let q_k = -p_k * (1.0 - p_k);
            let dq_w = -(1.0 - 2.0 * p_w) * q_w;
            let dq_k = -(1.0 - 2.0 * p_k) * q_k;
            let pt = PenaltyPoint::new(p_w, p_k, xs[i], &t);
            d.penalty += pt.value();
            let (m1w, m1k) = pt.m1();
            let (m2w, m2k, c) = pt.m2(&t);
            gw.push(2.0 * m1w * q_w);
            gk.push(2.0 * m1k * q_k);
            hww.push(2.0 * (m2w * q_w * q_w + m1w * dq_w));
            hkk.push(2.0 * (m2k * q_k * q_k + m1k * dq_k));
            hwk.push(2.0 * c * q_w * q_k);
            let (cw, ck) = pt.half_cross();
            cross_w.row_mut(i).copy_from(&(cw * (2.0 * q_w)).transpose());
            cross_k.row_mut(i).copy_from(&(ck * (2.0 * q_k)).transpose());
            grad_theta += pt.half_grad_theta();
            hess_theta += pt.half_hess_theta();
        }
        let gb = &self.grid_basis;
        d.penalty_grad_beta.rows_mut(0, k).copy_from(&weighted_sum(gb, &gw));
        d.penalty_grad_beta.rows_mut(k, k).copy_from(&weighted_sum(gb, &gk));
        d.penalty_hess_beta
            .view_mut((0, 0), (k, k))
            .copy_from(&weighted_gram(gb, &hww));
        d.penalty_hess_beta
            .view_mut((k, k), (k, k))
            .copy_from(&weighted_gram(gb, &hkk));
        let off = weighted_gram(gb, &hwk);
        d.penalty_hess_beta.view_mut((0, k), (k, k)).copy_from(&off);
        d.penalty_hess_beta.view_mut((k, 0), (k, k)).copy_from(&off);
        d.penalty_cross_beta_theta
            .view_mut((0, 0), (k, 5))
            .copy_from(&gb.tr_mul(&cross_w));
        d.penalty_cross_beta_theta
            .view_mut((k, 0), (k, 5))
            .copy_from(&gb.tr_mul(&cross_k));
        d.penalty_grad_theta.copy_from(&(grad_theta * 2.0));
        d.penalty_hess_theta.copy_from(&(hess_theta * 2.0));
        Ok(d)
    }

    fn values(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64)> {
        self.check_dims(beta, theta)?;
        let t = EntryTheta::from_slice(theta.as_slice())?;
        let (z_w, z_k) = self.probabilities(&self.data_basis, beta);
        let ll = self.loglik_value(&z_w, &z_k);
        let (gz_w, gz_k) = self.probabilities(&self.grid_basis, beta);
        let penalty = self
            .grid
            .points()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                PenaltyPoint::new(logistic_sieve_value(gz_w[i]), logistic_sieve_value(gz_k[i]), x, &t)
                    .value()
            })
            .sum();
        Ok((ll, penalty))
    }
}

/// Entry game on a finite covariate support where the coefficients are the
/// choice probabilities at each support point, `beta = (p_W(x_1..S), p_K(x_1..S))`.
/// The penalty and the equality constraints use each support point once.
#[derive(Clone, Debug)]
pub struct DiscreteEntryModel {
    support: Vec<f64>,
    markets: Vec<f64>,
    entries_w: Vec<f64>,
    entries_k: Vec<f64>,
}

impl DiscreteEntryModel {
    pub fn new(data: &EntryDataset) -> Result<Self> {
        let mut support = data.xs();
        support.sort_by(f64::total_cmp);
        support.dedup();
        let s = support.len();
        let mut markets = vec![0.0; s];
        let mut entries_w = vec![0.0; s];
        let mut entries_k = vec![0.0; s];
        for r in data.records() {
            let i = support
                .binary_search_by(|v| v.total_cmp(&r.x))
                .expect("record covariate is in the support");
            markets[i] += 1.0;
            entries_w[i] += r.d_w as f64;
            entries_k[i] += r.d_k as f64;
        }
        Ok(Self {
            support,
            markets,
            entries_w,
            entries_k,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    fn points(&self, beta: &DVector<f64>, t: &EntryTheta) -> Result<Vec<PenaltyPoint>> {
        let s = self.support.len();
        if let Some(p) = beta.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(PseError::NonFiniteObjective(format!(
                "choice probability {p} outside (0, 1)"
            )));
        }
        Ok((0..s)
            .map(|i| PenaltyPoint::new(beta[i], beta[s + i], self.support[i], t))
            .collect())
    }
}

impl StructuralModel for DiscreteEntryModel {
    fn beta_dim(&self) -> usize {
        2 * self.support.len()
    }

    fn theta_dim(&self) -> usize {
        5
    }

    fn theta_names(&self) -> Vec<String> {
        EntryTheta::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn evaluate(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> Result<ModelDerivatives> {
        self.check_dims(beta, theta)?;
        let t = EntryTheta::from_slice(theta.as_slice())?;
        let pts = self.points(beta, &t)?;
        let s = self.support.len();
        let mut d = ModelDerivatives::zeros(2 * s, 5);
        for (off, entries) in [(0, &self.entries_w), (s, &self.entries_k)] {
            for i in 0..s {
                let p = beta[off + i];
                let (e, n) = (entries[i], self.markets[i]);
                d.loglik += e * p.ln() + (n - e) * (1.0 - p).ln();
                d.loglik_grad_beta[off + i] = e / p - (n - e) / (1.0 - p);
                d.loglik_hess_beta[(off + i, off + i)] =
                    -e / (p * p) - (n - e) / ((1.0 - p) * (1.0 - p));
            }
        }
        for (i, pt) in pts.iter().enumerate() {
            d.penalty += pt.value();
            let (m1w, m1k) = pt.m1();
            let (m2w, m2k, c) = pt.m2(&t);
            d.penalty_grad_beta[i] = 2.0 * m1w;
            d.penalty_grad_beta[s + i] = 2.0 * m1k;
            d.penalty_hess_beta[(i, i)] = 2.0 * m2w;
            d.penalty_hess_beta[(s + i, s + i)] = 2.0 * m2k;
            d.penalty_hess_beta[(i, s + i)] = 2.0 * c;
            d.penalty_hess_beta[(s + i, i)] = 2.0 * c;
            let (cw, ck) = pt.half_cross();
            for j in 0..5 {
                d.penalty_cross_beta_theta[(i, j)] = 2.0 * cw[j];
                d.penalty_cross_beta_theta[(s + i, j)] = 2.0 * ck[j];
            }
            let g = pt.half_grad_theta();
            let h = pt.half_hess_theta();
            for a in 0..5 {
                d.penalty_grad_theta[a] += 2.0 * g[a];
                for b in 0..5 {
                    d.penalty_hess_theta[(a, b)] += 2.0 * h[(a, b)];
                }
            }
        }
        Ok(d)
    }

    /// Empirical entry frequencies at each support point, kept inside `[0.01, 0.99]`.
    fn beta_start(&self) -> DVector<f64> {
        let s = self.support.len();
        DVector::from_fn(2 * s, |i, _| {
            let (e, n) = if i < s {
                (self.entries_w[i], self.markets[i])
            } else {
                (self.entries_k[i - s], self.markets[i - s])
            };
            (e / n).clamp(0.01, 0.99)
        })
    }
}

impl ConstrainedModel for DiscreteEntryModel {
    fn constraint_dim(&self) -> usize {
        2 * self.support.len()
    }

    fn constraints(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        self.check_dims(beta, theta)?;
        let t = EntryTheta::from_slice(theta.as_slice())?;
        let pts = self.points(beta, &t)?;
        let s = self.support.len();
        let mut g = DVector::zeros(2 * s);
        let mut jb = DMatrix::zeros(2 * s, 2 * s);
        let mut jt = DMatrix::zeros(2 * s, 5);
        for (i, pt) in pts.iter().enumerate() {
            g[i] = pt.r_w;
            g[s + i] = pt.r_k;
            jb[(i, i)] = 1.0;
            jb[(i, s + i)] = -pt.dpsi_w;
            jb[(s + i, s + i)] = 1.0;
            jb[(s + i, i)] = -pt.dpsi_k;
            let (gw, gk) = pt.grad_psi();
            for j in 0..5 {
                jt[(i, j)] = -gw[j];
                jt[(s + i, j)] = -gk[j];
            }
        }
        Ok((g, jb, jt))
    }

    fn weighted_constraint_hessian(
        &self,
        beta: &DVector<f64>,
        theta: &DVector<f64>,
        weights: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_dims(beta, theta)?;
        let t = EntryTheta::from_slice(theta.as_slice())?;
        let pts = self.points(beta, &t)?;
        let s = self.support.len();
        let n = 2 * s + 5;
        let mut h = DMatrix::zeros(n, n);
        for (i, pt) in pts.iter().enumerate() {
            let x = self.support[i];
            // g_W depends on p_K and theta through u_W; g_K on p_W and theta
            let terms = [
                (
                    weights[i],
                    pt.a_w,
                    pt.psi_w,
                    [(s + i, -t.delta_w), (2 * s, 1.0), (2 * s + 1, -beta[s + i]), (2 * s + 4, x)],
                    (s + i, 2 * s + 1),
                ),
                (
                    weights[s + i],
                    pt.a_k,
                    pt.psi_k,
                    [(i, -t.delta_k), (2 * s + 2, 1.0), (2 * s + 3, -beta[i]), (2 * s + 4, x)],
                    (i, 2 * s + 3),
                ),
            ];
            for (w, a, psi, grad_u, (r, c)) in terms {
                let curv = -w * a * (1.0 - 2.0 * psi);
                for &(ia, va) in &grad_u {
                    for &(ib, vb) in &grad_u {
                        h[(ia, ib)] += curv * va * vb;
                    }
                }
                // u has the bilinear term -p_{-j} delta_j
                h[(r, c)] += w * a;
                h[(c, r)] += w * a;
            }
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

    fn theta0() -> EntryTheta {
        EntryTheta {
            pi_w: -20.65,
            delta_w: 0.50,
            pi_k: -23.55,
            delta_k: -1.95,
            gamma: 2.51,
        }
    }

    fn dataset(m: usize, seed: u64) -> EntryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = theta0();
        let recs = (0..m)
            .map(|_| {
                let x = rng.random_range(7.25..10.66);
                let (pw, pk) = entry_solve_equilibrium(x, &t, 1e-13).unwrap();
                EntryRecord {
                    d_w: (rng.random::<f64>() < pw) as u8,
                    d_k: (rng.random::<f64>() < pk) as u8,
                    x,
                }
            })
            .collect();
        EntryDataset::new(recs).unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_vec(vec![
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.5..0.5),
        ])
    }

    #[test]
    fn best_response_cases() {
        let zero = EntryTheta::default();
        assert_eq!(entry_best_response(0.3, 9.0, &zero, Firm::W), 0.5);
        let t = EntryTheta {
            pi_w: 0.4,
            delta_w: 0.0,
            gamma: 0.1,
            ..Default::default()
        };
        let a = entry_best_response(0.1, 2.0, &t, Firm::W);
        let b = entry_best_response(0.9, 2.0, &t, Firm::W);
        assert_eq!(a, b);
        assert!((a - logistic(0.6)).abs() < 1e-15);
        let t = EntryTheta {
            delta_w: 1.5,
            ..t
        };
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let v = entry_best_response(i as f64 / 10.0, 2.0, &t, Firm::W);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn equilibrium_cases() {
        assert_eq!(
            entry_solve_equilibrium(3.0, &EntryTheta::default(), 1e-12).unwrap(),
            (0.5, 0.5)
        );
        let t = EntryTheta {
            pi_w: 0.3,
            pi_k: -0.7,
            gamma: 0.2,
            ..Default::default()
        };
        let (pw, pk) = entry_solve_equilibrium(1.5, &t, 1e-12).unwrap();
        assert!((pw - logistic(0.6)).abs() < 1e-14);
        assert!((pk - logistic(-0.4)).abs() < 1e-14);
        let t = theta0();
        for &x in &[7.25, 8.0, 9.3, 10.66] {
            let (pw, pk) = entry_solve_equilibrium(x, &t, 1e-10).unwrap();
            assert!((pw - entry_best_response(pk, x, &t, Firm::W)).abs() < 1e-12);
            assert!((pk - entry_best_response(pw, x, &t, Firm::K)).abs() < 1e-12);
        }
        assert!(entry_solve_equilibrium(1.0, &t, 0.0).is_err());
    }

    #[test]
    fn loglik_and_penalty_at_zero() {
        let data = dataset(150, 1);
        let m = EntryModel::with_basis_count(&data, 6).unwrap();
        let d = m
            .evaluate(&DVector::zeros(12), &DVector::zeros(5))
            .unwrap();
        assert!((d.loglik - 300.0 * 0.5_f64.ln()).abs() < 1e-9);
        assert!(d.penalty.abs() < 1e-30);
    }

    #[test]
    fn loglik_is_permutation_invariant() {
        let data = dataset(120, 2);
        let mut recs = data.records().to_vec();
        recs.reverse();
        recs.swap(3, 77);
        let shuffled = EntryDataset::new(recs).unwrap();
        let a = EntryModel::with_basis_count(&data, 6).unwrap();
        let b = EntryModel::with_basis_count(&shuffled, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = DVector::from_fn(12, |_, _| rng.random_range(-0.5..0.5));
        let theta = random_theta(&mut rng);
        let (la, pa) = a.values(&beta, &theta).unwrap();
        let (lb, pb) = b.values(&beta, &theta).unwrap();
        assert!((la - lb).abs() < 1e-9 * la.abs());
        assert!((pa - pb).abs() < 1e-9 * (1.0 + pa));
    }

    #[test]
    fn derivative_blocks_match_finite_differences() {
        let data = dataset(200, 4);
        let m = EntryModel::with_basis_count(&data, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..10 {
            let beta = DVector::from_fn(12, |_, _| rng.random_range(-0.5..0.5));
            let theta = random_theta(&mut rng);
            let d = m.evaluate(&beta, &theta).unwrap();
            let th = theta.clone();
            let b0 = beta.clone();
            let checks = [
                check_gradient(|b| Ok(m.evaluate(b, &th)?.loglik), |_| Ok(d.loglik_grad_beta.clone()), &beta, h).unwrap(),
                check_jacobian(|b| Ok(m.evaluate(b, &th)?.loglik_grad_beta), &d.loglik_hess_beta, &beta, h).unwrap(),
                check_gradient(|b| Ok(m.evaluate(b, &th)?.penalty), |_| Ok(d.penalty_grad_beta.clone()), &beta, h).unwrap(),
                check_jacobian(|b| Ok(m.evaluate(b, &th)?.penalty_grad_beta), &d.penalty_hess_beta, &beta, h).unwrap(),
                check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_beta), &d.penalty_cross_beta_theta, &theta, h).unwrap(),
                check_gradient(|t| Ok(m.evaluate(&b0, t)?.penalty), |_| Ok(d.penalty_grad_theta.clone()), &theta, h).unwrap(),
                check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_theta), &d.penalty_hess_theta, &theta, h).unwrap(),
            ];
            for (i, e) in checks.iter().enumerate() {
                assert!(*e < 1e-5, "block {i}: relative error {e}");
            }
            let (ll, pen) = m.values(&beta, &theta).unwrap();
            assert!((ll - d.loglik).abs() < 1e-10 * ll.abs());
            assert!((pen - d.penalty).abs() < 1e-12 * (1.0 + pen));
        }
    }

    #[test]
    fn penalty_vanishes_at_equilibrium_probabilities() {
        let data = dataset(60, 6);
        let m = DiscreteEntryModel::new(&data).unwrap();
        let t = theta0();
        let s = m.support().len();
        let mut beta = DVector::zeros(2 * s);
        for (i, &x) in m.support().iter().enumerate() {
            let (pw, pk) = entry_solve_equilibrium(x, &t, 1e-13).unwrap();
            beta[i] = pw;
            beta[s + i] = pk;
        }
        let d = m.evaluate(&beta, &t.to_vector()).unwrap();
        assert!(d.penalty < 1e-24);
        let (g, _, _) = m.constraints(&beta, &t.to_vector()).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn discrete_blocks_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let recs: Vec<_> = (0..90)
            .map(|i| EntryRecord {
                d_w: rng.random_range(0..2),
                d_k: rng.random_range(0..2),
                x: [0.5, 1.0, 1.5][i % 3],
            })
            .collect();
        let m = DiscreteEntryModel::new(&EntryDataset::new(recs).unwrap()).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let beta = DVector::from_fn(6, |_, _| rng.random_range(0.2..0.8));
            let theta = random_theta(&mut rng);
            let d = m.evaluate(&beta, &theta).unwrap();
            let th = theta.clone();
            let b0 = beta.clone();
            let checks = [
                check_gradient(|b| Ok(m.evaluate(b, &th)?.loglik), |_| Ok(d.loglik_grad_beta.clone()), &beta, h).unwrap(),
                check_jacobian(|b| Ok(m.evaluate(b, &th)?.loglik_grad_beta), &d.loglik_hess_beta, &beta, h).unwrap(),
                check_jacobian(|b| Ok(m.evaluate(b, &th)?.penalty_grad_beta), &d.penalty_hess_beta, &beta, h).unwrap(),
                check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_beta), &d.penalty_cross_beta_theta, &theta, h).unwrap(),
                check_jacobian(|t| Ok(m.evaluate(&b0, t)?.penalty_grad_theta), &d.penalty_hess_theta, &theta, h).unwrap(),
            ];
            for (i, e) in checks.iter().enumerate() {
                assert!(*e < 1e-5, "block {i}: relative error {e}");
            }
            let (_, jb, jt) = m.constraints(&beta, &theta).unwrap();
            let e = check_jacobian(|b| Ok(m.constraints(b, &th)?.0), &jb, &beta, h).unwrap();
            assert!(e < 1e-6, "constraint jacobian beta {e}");
            let e = check_jacobian(|t| Ok(m.constraints(&b0, t)?.0), &jt, &theta, h).unwrap();
            assert!(e < 1e-6, "constraint jacobian theta {e}");
            let w = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let hess = m.weighted_constraint_hessian(&beta, &theta, &w).unwrap();
            let z = DVector::from_iterator(11, beta.iter().chain(theta.iter()).copied());
            let e = check_jacobian(
                |z| {
                    let (b, t) = (z.rows(0, 6).into_owned(), z.rows(6, 5).into_owned());
                    let (_, jb, jt) = m.constraints(&b, &t)?;
                    let mut out = DVector::zeros(11);
                    out.rows_mut(0, 6).copy_from(&jb.tr_mul(&w));
                    out.rows_mut(6, 5).copy_from(&jt.tr_mul(&w));
                    Ok(out)
                },
                &hess,
                &z,
                h,
            )
            .unwrap();
            assert!(e < 1e-6, "weighted constraint hessian {e}");
        }
    }

    #[test]
    fn preliminary_theta_recovers_index_from_exact_probabilities() {
        // probabilities that are exact best responses at theta0 make the regression exact
        let data = dataset(300, 8);
        let m = EntryModel::with_basis_count(&data, 8).unwrap();
        let t = theta0();
        let xs = m.grid().points().to_vec();
        let s = m.spec().grid.basis_matrix(&xs).unwrap();
        let mut zw = DVector::zeros(xs.len());
        let mut zk = DVector::zeros(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            let (pw, pk) = entry_solve_equilibrium(x, &t, 1e-13).unwrap();
            zw[i] = ((1.0 - pw) / pw).ln();
            zk[i] = ((1.0 - pk) / pk).ln();
        }
        let svd = s.svd(true, true);
        let bw = svd.solve(&zw, 1e-14).unwrap();
        let bk = svd.solve(&zk, 1e-14).unwrap();
        let beta = DVector::from_iterator(16, bw.iter().chain(bk.iter()).copied());
        let est = m.preliminary_theta(&beta).unwrap();
        for (a, b) in est.to_array().iter().zip(t.to_array()) {
            assert!((a - b).abs() < 1e-2 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
