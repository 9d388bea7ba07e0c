//! Comparison estimators: full-solution MLE, nested pseudo-likelihood and the
//! two-step plug-in estimator with a local linear first stage.

mod kernel;
mod mle;
mod npl;
mod two_step;

pub use kernel::{cv_grid, local_linear_fit, Bandwidth, KernelFit, MIN_POINTS};
pub use mle::{fd_loglik_hessian, mle_estimate, ExactlySolvable};
pub use npl::{npl_estimate, NplOptions, NplResult, NplState, PseudoLikelihood};
pub use two_step::{median, two_step_estimate, Aggregate, TwoStepOptions};
