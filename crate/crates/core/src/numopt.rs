//! Dense linear algebra helpers, a damped Newton maximizer and finite-difference
//! derivative checks.
//!
//! The maximizer expects analytic gradients and Hessians. When the Hessian is not
//! negative definite its offending eigenvalues are flipped and floored before the
//! Newton system is solved. A step that fails the Armijo test is retried with a
//! larger Levenberg-Marquardt damping `mu I`, and the damping decays again after
//! accepted steps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PseError, Result};

/// What an evaluator is asked to compute at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Only `value` is read; the gradient may be left empty.
    Value,
    Gradient,
    Hessian,
}

impl Order {
    pub fn wants_gradient(self) -> bool {
        !matches!(self, Order::Value)
    }

    pub fn wants_hessian(self) -> bool {
        matches!(self, Order::Hessian)
    }
}

/// Value, gradient and (optionally) Hessian of an objective at one point.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

impl ObjectiveEval {
    /// Builds an evaluation, symmetrizing the Hessian as `(H + H^T) / 2`.
    pub fn new(value: f64, gradient: DVector<f64>, hessian: Option<DMatrix<f64>>) -> Self {
        let hessian = hessian.map(|h| symmetrize(&h));
        Self {
            value,
            gradient,
            hessian,
        }
    }

    pub fn value_only(value: f64) -> Self {
        Self {
            value,
            gradient: DVector::zeros(0),
            hessian: None,
        }
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self
                .hessian
                .as_ref()
                .is_none_or(|h| h.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    /// The line search could not find an increase and the predicted gain was
    /// below the rounding resolution of the objective.
    NoProgress,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct MaximizerResult {
    pub argmax: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub hessian_at_opt: DMatrix<f64>,
}

impl MaximizerResult {
    /// Turns a non-converged run into `MaxIterationsExceeded`.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(PseError::MaxIterationsExceeded {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm,
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub grad_tol: f64,
    /// Relative to `1 + |x|_inf`.
    pub step_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    /// Rejected trial steps per iteration before giving up.
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 200,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn matrix_inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve_linear_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(PseError::dims("square matrix columns", n, a.ncols()));
    }
    if b.nrows() != n {
        return Err(PseError::dims("right-hand side rows", n, b.nrows()));
    }
    let threshold = 1e-13 * matrix_inf_norm(a);
    let lu = a.clone().lu();
    let u = lu.u();
    for i in 0..n {
        let pivot = u[(i, i)].abs();
        if !(pivot > threshold) {
            return Err(PseError::SingularMatrix { pivot, threshold });
        }
    }
    lu.solve(b).ok_or(PseError::SingularMatrix {
        pivot: 0.0,
        threshold,
    })
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_linear_matrix(a, &rhs)?;
    Ok(x.column(0).into_owned())
}

/// Inverse via [`solve_linear_matrix`] against the identity.
pub fn invert(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_linear_matrix(a, &DMatrix::identity(a.nrows(), a.ncols()))
}

/// Eigen-decomposed Hessian used to build damped ascent directions.
struct Curvature {
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
    max_abs: f64,
}

impl Curvature {
    fn new(h: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        Self { eig, max_abs }
    }

    /// Smallest useful damping: below this the direction equals the undamped one.
    fn base_damping(&self) -> f64 {
        DAMPING_BASE * (1.0 + self.max_abs)
    }

    /// Ascent direction `d = -(H_mod - mu I)^{-1} g`. `H_mod` has the eigenvectors
    /// of `H`; eigenvalues that are not safely negative are replaced by
    /// `-max(|lambda|, floor)`, so well-scaled directions keep their Newton step
    /// even when the spectrum spans many orders of magnitude.
    fn direction(&self, g: &DVector<f64>, mu: f64) -> DVector<f64> {
        let floor = EIGEN_FLOOR * (1.0 + self.max_abs);
        let mut d = DVector::zeros(g.len());
        for (i, &lambda) in self.eig.eigenvalues.iter().enumerate() {
            let curvature = if lambda < -floor { lambda } else { -lambda.abs().max(floor) };
            let v = self.eig.eigenvectors.column(i);
            d.axpy(-v.dot(g) / (curvature - mu), &v, 1.0);
        }
        d
    }
}

/// Smallest curvature magnitude kept by [`Curvature::direction`], relative to the
/// largest eigenvalue magnitude.
const EIGEN_FLOOR: f64 = 1e-14;

/// First damping tried after a rejected step, relative to the largest eigenvalue
/// magnitude.
const DAMPING_BASE: f64 = 1e-12;

/// Damping growth after a rejected step and decay after an accepted one.
const DAMPING_FACTOR: f64 = 10.0;

/// Maximizes `objective` from `x0` with a damped Newton method.
///
/// The evaluator is called with [`Order::Hessian`] at accepted points and with
/// [`Order::Value`] at trial points. A trial point whose evaluation
/// fails or is not finite is treated like a rejected step.
pub fn newton_maximize<F>(
    mut objective: F,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<MaximizerResult>
where
    F: FnMut(&DVector<f64>, Order) -> Result<ObjectiveEval>,
{
    let mut x = x0.clone();
    let mut eval = objective(&x, Order::Hessian)?;
    if !eval.is_finite() {
        return Err(PseError::NonFiniteObjective(
            "objective not finite at the starting point".into(),
        ));
    }
    if eval.gradient.len() != x.len() {
        return Err(PseError::dims("gradient", x.len(), eval.gradient.len()));
    }
    let mut iterations = 0;
    let mut mu = 0.0;
    let stop = loop {
        let gnorm = inf_norm(&eval.gradient);
        if gnorm <= opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }
        let h = eval.hessian.as_ref().ok_or_else(|| {
            PseError::NonFiniteObjective("evaluator returned no Hessian".into())
        })?;
        let curv = Curvature::new(h);
        let mut accepted = None;
        let mut slope = 0.0;
        for _ in 0..=opts.max_backtracks {
            let d = curv.direction(&eval.gradient, mu);
            slope = eval.gradient.dot(&d);
            let trial = &x + &d;
            if let Ok(e) = objective(&trial, Order::Value) {
                if e.value.is_finite() && e.value >= eval.value + opts.armijo * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            mu = (mu * DAMPING_FACTOR).max(curv.base_damping());
        }
        let Some(next) = accepted else {
            let resolution = 16.0 * f64::EPSILON * (1.0 + eval.value.abs());
            break if slope <= resolution {
                StopReason::NoProgress
            } else {
                StopReason::LineSearchFailed
            };
        };
        log::trace!(
            "newton iteration {iterations}: value {:e}, gradient {gnorm:e}, damping {mu:e}, eigenvalues in [{:e}, {:e}]",
            eval.value,
            curv.eig.eigenvalues.min(),
            curv.eig.eigenvalues.max()
        );
        mu = if mu > curv.base_damping() { mu / DAMPING_FACTOR } else { 0.0 };
        let step = inf_norm(&(&next - &x));
        x = next;
        eval = objective(&x, Order::Hessian)?;
        if !eval.is_finite() {
            return Err(PseError::NonFiniteObjective(
                "objective not finite at an accepted point".into(),
            ));
        }
        iterations += 1;
        if step <= opts.step_tol * (1.0 + inf_norm(&x)) {
            break StopReason::StepTolerance;
        }
    };
    let gradient_norm = inf_norm(&eval.gradient);
    let converged = matches!(
        stop,
        StopReason::GradientTolerance | StopReason::StepTolerance | StopReason::NoProgress
    );
    let hessian_at_opt = eval
        .hessian
        .clone()
        .unwrap_or_else(|| DMatrix::zeros(x.len(), x.len()));
    Ok(MaximizerResult {
        argmax: x,
        value: eval.value,
        gradient: eval.gradient,
        gradient_norm,
        iterations,
        converged,
        stop,
        hessian_at_opt,
    })
}

/// Largest componentwise relative error between `grad(x)` and central differences
/// of `f`, using `max(1, |analytic|)` as the denominator.
pub fn check_gradient<F, G>(mut f: F, mut grad: G, x: &DVector<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let analytic = grad(x)?;
    if analytic.len() != x.len() {
        return Err(PseError::dims("gradient", x.len(), analytic.len()));
    }
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let (fp, fm) = (f(&xp)?, f(&xm)?);
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(PseError::NonFiniteObjective(format!(
                "function not finite near coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Central-difference Jacobian of a vector field; column `i` is `d f / d x_i`.
/// `steps[i]` is the step for coordinate `i`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += steps[i];
        xm[i] -= steps[i];
        let d = (f(&xp)? - f(&xm)?) / (2.0 * steps[i]);
        cols.push(d);
    }
    let rows = cols.first().map_or(0, |c| c.len());
    let mut jac = DMatrix::zeros(rows, x.len());
    for (i, c) in cols.iter().enumerate() {
        jac.set_column(i, c);
    }
    Ok(jac)
}

/// Largest entrywise relative error between an analytic Jacobian and central
/// differences of `f`, denominator `max(1, |analytic|)`.
pub fn check_jacobian<F>(f: F, analytic: &DMatrix<f64>, x: &DVector<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let numeric = fd_jacobian(f, x, &vec![h; x.len()])?;
    if numeric.shape() != analytic.shape() {
        return Err(PseError::dims(
            "jacobian rows",
            analytic.nrows(),
            numeric.nrows(),
        ));
    }
    Ok(numeric
        .iter()
        .zip(analytic.iter())
        .map(|(n, a)| (n - a).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn quadratic(a: DMatrix<f64>, b: DVector<f64>) -> impl FnMut(&DVector<f64>, Order) -> Result<ObjectiveEval> {
        move |x, _| {
            let ax = &a * x;
            let value = -0.5 * x.dot(&ax) + b.dot(x);
            Ok(ObjectiveEval::new(value, &b - ax, Some(-a.clone())))
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_linear(&DMatrix::identity(3, 3), &dvector![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, dvector![1.0, 2.0, 3.0]);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = solve_linear(&a, &dvector![2.0, 8.0]).unwrap();
        assert_relative_eq!(x, dvector![1.0, 2.0], epsilon = 1e-15);
    }

    #[test]
    fn solve_recovers_constructed_solution() {
        // diagonally dominant so the system is well conditioned
        let a = DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                10.0 + i as f64
            } else {
                ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4
            }
        });
        let x_star = dvector![1.0, -2.0, 0.5, 3.0, -0.25];
        let b = &a * &x_star;
        let x = solve_linear(&a, &b).unwrap();
        assert!(inf_norm(&(x - x_star)) < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            solve_linear(&a, &dvector![1.0, 1.0]),
            Err(PseError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn scalar_quadratic_takes_one_step() {
        let f = |x: &DVector<f64>, _| {
            let r = x[0] - 2.0;
            Ok(ObjectiveEval::new(
                -r * r,
                dvector![-2.0 * r],
                Some(DMatrix::from_element(1, 1, -2.0)),
            ))
        };
        let res = newton_maximize(f, &dvector![0.0], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_relative_eq!(res.argmax[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn matrix_quadratic_solves_linear_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = dvector![1.0, 1.0];
        let expected = solve_linear(&a, &b).unwrap();
        let res = newton_maximize(quadratic(a, b), &dvector![5.0, -7.0], &NewtonOptions::default())
            .unwrap();
        assert_eq!(res.iterations, 1);
        assert_relative_eq!(res.argmax, expected, epsilon = 1e-12);
    }

    #[test]
    fn normal_location_mle_is_sample_mean() {
        let ys = [0.3, -1.2, 2.5, 0.9, 1.1, -0.4];
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let f = |x: &DVector<f64>, _| {
            let mu = x[0];
            let value: f64 = ys
                .iter()
                .map(|y| -0.5 * (y - mu) * (y - mu) - 0.5 * (2.0 * std::f64::consts::PI).ln())
                .sum();
            let g: f64 = ys.iter().map(|y| y - mu).sum();
            Ok(ObjectiveEval::new(
                value,
                dvector![g],
                Some(DMatrix::from_element(1, 1, -(ys.len() as f64))),
            ))
        };
        let res = newton_maximize(f, &dvector![10.0], &NewtonOptions::default()).unwrap();
        assert_relative_eq!(res.argmax[0], mean, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_start_still_reaches_maximum() {
        // f = -(x^2 - 1)^2 - y^2 has an indefinite Hessian at x = 0.1
        let f = |v: &DVector<f64>, _| {
            let (x, y) = (v[0], v[1]);
            let value = -(x * x - 1.0).powi(2) - y * y;
            let g = dvector![-4.0 * x * (x * x - 1.0), -2.0 * y];
            let h = DMatrix::from_row_slice(2, 2, &[-12.0 * x * x + 4.0, 0.0, 0.0, -2.0]);
            Ok(ObjectiveEval::new(value, g, Some(h)))
        };
        let res = newton_maximize(f, &dvector![0.1, 0.5], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.argmax[0].abs(), 1.0, epsilon = 1e-9);
        assert!(symmetric_eigenvalues(&res.hessian_at_opt)[1] < 0.0);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &DVector<f64>, _| Ok(ObjectiveEval::new(f64::NAN, dvector![0.0], None));
        assert!(matches!(
            newton_maximize(f, &dvector![0.0], &NewtonOptions::default()),
            Err(PseError::NonFiniteObjective(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let f = |v: &DVector<f64>, _| {
            let x = v[0];
            // slowly convergent: -x^4 has a degenerate maximum at 0
            Ok(ObjectiveEval::new(
                -x.powi(4),
                dvector![-4.0 * x.powi(3)],
                Some(DMatrix::from_element(1, 1, -12.0 * x * x)),
            ))
        };
        let opts = NewtonOptions {
            max_iter: 3,
            ..NewtonOptions::default()
        };
        let res = newton_maximize(f, &dvector![5.0], &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.stop, StopReason::MaxIterations);
        assert!(matches!(
            res.require_converged(),
            Err(PseError::MaxIterationsExceeded { .. })
        ));
    }

    #[test]
    fn gradient_check_on_exact_polynomial() {
        let err = check_gradient(
            |x| Ok(x.norm_squared()),
            |x| Ok(x * 2.0),
            &dvector![1.0, -1.0],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8);
        let err = check_gradient(|_| Ok(3.0), |_| Ok(dvector![0.0, 0.0]), &dvector![1.0, 2.0], 1e-6)
            .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn jacobian_check_on_hessian_of_cubic() {
        let grad = |x: &DVector<f64>| Ok(dvector![3.0 * x[0] * x[0] * x[1], x[0].powi(3)]);
        let x = dvector![0.7, -1.3];
        let hess = DMatrix::from_row_slice(
            2,
            2,
            &[6.0 * x[0] * x[1], 3.0 * x[0] * x[0], 3.0 * x[0] * x[0], 0.0],
        );
        assert!(check_jacobian(grad, &hess, &x, 1e-5).unwrap() < 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quadratic_converges_in_one_step(
                d0 in 0.5f64..5.0, d1 in 0.5f64..5.0, off in -0.4f64..0.4,
                b0 in -3.0f64..3.0, b1 in -3.0f64..3.0,
                s0 in -50.0f64..50.0, s1 in -50.0f64..50.0,
            ) {
                let off = off * (d0 * d1).sqrt();
                let a = DMatrix::from_row_slice(2, 2, &[d0, off, off, d1]);
                let b = dvector![b0, b1];
                let res = newton_maximize(quadratic(a, b), &dvector![s0, s1], &NewtonOptions::default()).unwrap();
                prop_assert!(res.converged);
                prop_assert_eq!(res.iterations, 1);
            }

            #[test]
            fn solve_residual_is_small(
                entries in proptest::collection::vec(-1.0f64..1.0, 16),
                rhs in proptest::collection::vec(-10.0f64..10.0, 4),
            ) {
                let mut a = DMatrix::from_vec(4, 4, entries);
                for i in 0..4 { a[(i, i)] += 4.0; }
                let b = DVector::from_vec(rhs);
                let x = solve_linear(&a, &b).unwrap();
                let resid = inf_norm(&(&a * &x - &b));
                prop_assert!(resid <= 1e-10 * (1.0 + inf_norm(&b)));
            }

            #[test]
            fn cubic_gradient_check_is_tight(
                c in proptest::collection::vec(-3.0f64..3.0, 4),
                x0 in -2.0f64..2.0,
            ) {
                let f = |x: &DVector<f64>| Ok(c[0] + c[1] * x[0] + c[2] * x[0].powi(2) + c[3] * x[0].powi(3));
                let g = |x: &DVector<f64>| Ok(dvector![c[1] + 2.0 * c[2] * x[0] + 3.0 * c[3] * x[0].powi(2)]);
                let err = check_gradient(f, g, &dvector![x0], 1e-5).unwrap();
                prop_assert!(err < 1e-7);
            }
        }
    }
}
