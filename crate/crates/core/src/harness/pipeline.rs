//! End-to-end estimation on a data set: build the model, choose starting values and
//! run one estimator.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    mle_estimate, npl_estimate, two_step_estimate, NplOptions, TwoStepOptions,
};
use crate::error::{PseError, Result};
use crate::models::{
    DiscreteEntryModel, DiscreteMonopolyModel, EntryDataset, EntryModel, EntryTheta, FitCurveRow, MonopolyDataset,
    MonopolyModel, StructuralModel,
};
use crate::pse::{
    continuation_estimate, estimate, mpec_estimate, select_omega, unpenalized_fit, Algorithm, EstimateOptions, EstimateResult,
    MpecOptions, OmegaPath, OmegaSelection,
};

/// Fixed smoothing parameter or the automatic selection loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOmega", into = "RawOmega")]
pub enum OmegaPolicy {
    Fixed(f64),
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawOmega {
    Number(f64),
    Text(String),
}

impl TryFrom<RawOmega> for OmegaPolicy {
    type Error = PseError;

    fn try_from(raw: RawOmega) -> Result<Self> {
        match raw {
            RawOmega::Number(w) => Ok(OmegaPolicy::Fixed(w)),
            RawOmega::Text(s) => s.parse(),
        }
    }
}

impl From<OmegaPolicy> for RawOmega {
    fn from(p: OmegaPolicy) -> Self {
        match p {
            OmegaPolicy::Fixed(w) => RawOmega::Number(w),
            OmegaPolicy::Auto => RawOmega::Text("auto".into()),
        }
    }
}

impl FromStr for OmegaPolicy {
    type Err = PseError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(OmegaPolicy::Auto);
        }
        match s.parse::<f64>() {
            Ok(w) if w > 0.0 && w.is_finite() => Ok(OmegaPolicy::Fixed(w)),
            _ => Err(PseError::Config(format!("omega must be `auto` or a positive number, got `{s}`"))),
        }
    }
}

impl fmt::Display for OmegaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaPolicy::Fixed(w) => write!(f, "{w:e}"),
            OmegaPolicy::Auto => f.write_str("auto"),
        }
    }
}

/// Default sieve size for the monopoly model.
pub const MONOPOLY_DEFAULT_K: usize = 6;

/// Default sieve size for the entry game. Smaller sieves leave an approximation
/// floor in the penalty that, once multiplied by a large `omega`, pulls the
/// competition effects toward zero, where the equilibrium logit is linear in `x`.
pub const ENTRY_DEFAULT_K: usize = 16;

#[derive(Clone, Copy, Debug)]
pub struct EstimationConfig {
    /// Number of sieve basis functions.
    pub k: usize,
    pub omega: OmegaPolicy,
    pub selection: OmegaSelection,
    /// Size of the uniform penalty grid of the monopoly sieve.
    pub penalty_points: usize,
    pub options: EstimateOptions,
    pub mpec: MpecOptions,
    pub npl: NplOptions,
    pub two_step: TwoStepOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k: MONOPOLY_DEFAULT_K,
            omega: OmegaPolicy::Auto,
            selection: OmegaSelection::default(),
            penalty_points: 1000,
            options: EstimateOptions::default(),
            mpec: MpecOptions::default(),
            npl: NplOptions::default(),
            two_step: TwoStepOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub estimate: EstimateResult,
    /// Present when the smoothing parameter was selected automatically.
    pub omega_path: Option<OmegaPath>,
}

impl Fit {
    fn plain(estimate: EstimateResult) -> Self {
        Self {
            estimate,
            omega_path: None,
        }
    }
}

fn penalized<M: StructuralModel + ?Sized>(
    model: &M,
    algorithm: Algorithm,
    theta0: &DVector<f64>,
    beta0: &DVector<f64>,
    cfg: &EstimationConfig,
) -> Result<Fit> {
    if algorithm == Algorithm::Amle {
        return Ok(Fit::plain(estimate(model, algorithm, 0.0, theta0, beta0, &cfg.options)?));
    }
    match cfg.omega {
        OmegaPolicy::Fixed(w) => Ok(Fit::plain(continuation_estimate(
            model,
            algorithm,
            w,
            cfg.selection.omega_1,
            cfg.selection.t,
            theta0,
            beta0,
            &cfg.options,
        )?)),
        OmegaPolicy::Auto => {
            let sel = OmegaSelection {
                algorithm,
                ..cfg.selection
            };
            let (path, est) = select_omega(model, &sel, theta0, beta0, &cfg.options)?;
            Ok(Fit {
                estimate: est,
                omega_path: Some(path),
            })
        }
    }
}

/// Sieve model for the monopoly data with its unpenalized coefficients and
/// preliminary `theta`.
pub fn monopoly_start(data: &MonopolyDataset, cfg: &EstimationConfig) -> Result<(MonopolyModel, DVector<f64>, f64)> {
    let model = MonopolyModel::with_basis_count(data, cfg.k, cfg.penalty_points)?;
    let beta0 = unpenalized_fit(&model, &DVector::from_element(1, 1.0))?;
    let theta0 = model.preliminary_theta(&beta0)?;
    Ok((model, beta0, theta0))
}

/// Smallest starting value handed to estimators that need `theta > 0`.
const MIN_THETA_START: f64 = 1e-3;

pub fn fit_monopoly(data: &MonopolyDataset, algorithm: Algorithm, cfg: &EstimationConfig) -> Result<Fit> {
    if algorithm == Algorithm::TwoStep {
        return Ok(Fit::plain(two_step_estimate(data, &cfg.two_step)?.0));
    }
    let (model, beta0, theta0) = monopoly_start(data, cfg)?;
    let positive = DVector::from_element(1, theta0.max(MIN_THETA_START));
    match algorithm {
        Algorithm::Joint | Algorithm::Nested | Algorithm::Amle => {
            penalized(&model, algorithm, &DVector::from_element(1, theta0), &beta0, cfg)
        }
        Algorithm::Mle => Ok(Fit::plain(mle_estimate(data, &positive, &cfg.options)?)),
        Algorithm::Npl => {
            let p0 = model.fitted_prices(&beta0)?;
            Ok(Fit::plain(npl_estimate(data, &p0, &positive, &cfg.npl, &cfg.options)?.estimate))
        }
        Algorithm::Mpec => {
            let discrete = DiscreteMonopolyModel::new(data)?;
            let beta = discrete.cell_means();
            let mpec = MpecOptions {
                alpha: cfg.options.alpha,
                ..cfg.mpec
            };
            let res = mpec_estimate(&discrete, &DVector::from_element(1, theta0), &beta, &mpec)?;
            Ok(Fit::plain(res.estimate))
        }
        Algorithm::TwoStep => unreachable!("handled above"),
    }
}

/// Sieve model for the entry data, the regression-based preliminary `theta` from
/// the unpenalized fit, and starting coefficients that project the equilibrium at
/// that `theta` onto the sieve.
pub fn entry_start(data: &EntryDataset, cfg: &EstimationConfig) -> Result<(EntryModel, DVector<f64>, DVector<f64>)> {
    let model = EntryModel::with_basis_count(data, cfg.k)?;
    let unpenalized = unpenalized_fit(&model, &DVector::zeros(5))?;
    let theta0 = model.preliminary_theta(&unpenalized)?;
    let beta0 = model.equilibrium_projection(&theta0)?;
    Ok((model, beta0, theta0.to_vector()))
}

pub fn fit_entry(data: &EntryDataset, algorithm: Algorithm, cfg: &EstimationConfig) -> Result<Fit> {
    let (model, beta0, theta0) = entry_start(data, cfg)?;
    match algorithm {
        Algorithm::Joint | Algorithm::Nested | Algorithm::Amle => penalized(&model, algorithm, &theta0, &beta0, cfg),
        Algorithm::Mle => Ok(Fit::plain(mle_estimate(data, &theta0, &cfg.options)?)),
        Algorithm::Npl => {
            let th = EntryTheta::from_slice(theta0.as_slice())?;
            let unpenalized = unpenalized_fit(&model, &DVector::zeros(5))?;
            let rows = model.fit_curve(&unpenalized, &th, &data.xs())?;
            let m = rows.len();
            let p0 = DVector::from_fn(2 * m, |i, _| if i < m { rows[i].p_w } else { rows[i - m].p_k });
            Ok(Fit::plain(npl_estimate(data, &p0, &theta0, &cfg.npl, &cfg.options)?.estimate))
        }
        Algorithm::Mpec => {
            let discrete = DiscreteEntryModel::new(data)?;
            let beta = discrete.beta_start();
            let mpec = MpecOptions {
                alpha: cfg.options.alpha,
                ..cfg.mpec
            };
            Ok(Fit::plain(mpec_estimate(&discrete, &theta0, &beta, &mpec)?.estimate))
        }
        Algorithm::TwoStep => Err(PseError::Config("the two-step estimator is defined for the monopoly model only".into())),
    }
}

/// Sieve probabilities and best responses at the sorted observed covariates for a
/// penalized-sieve entry fit.
pub fn entry_fit_curve(data: &EntryDataset, k: usize, est: &EstimateResult) -> Result<Vec<FitCurveRow>> {
    if !matches!(est.algorithm, Algorithm::Joint | Algorithm::Nested | Algorithm::Amle) {
        return Err(PseError::Config(format!(
            "fit curves need sieve coefficients; `{}` does not produce them",
            est.algorithm.name()
        )));
    }
    let model = EntryModel::with_basis_count(data, k)?;
    let theta = EntryTheta::from_slice(&est.theta_hat)?;
    let mut xs = data.xs();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    model.fit_curve(&est.beta(), &theta, &xs)
}
