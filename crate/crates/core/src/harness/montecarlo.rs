//! Repeated simulation and estimation with per-replication RNG streams.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{fit_entry, fit_monopoly, EstimationConfig, OmegaPolicy, ENTRY_DEFAULT_K, MONOPOLY_DEFAULT_K};
use super::simulate::{
    replication_rng, simulate_entry_with, simulate_monopoly_with, EntryDesign, MonopolyDesign, ENTRY_THETA_0,
    ENTRY_X_HI, ENTRY_X_LO,
};
use crate::baselines::TwoStepOptions;
use crate::error::{PseError, Result};
use crate::models::EntryTheta;
use crate::pse::{Algorithm, EstimateResult, OmegaSelection};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PSE_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McModel {
    Monopoly,
    Entry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub model: McModel,
    pub n_obs: usize,
    pub n_reps: usize,
    /// True parameters; empty means the model default.
    pub theta_0: Vec<f64>,
    /// Upper end of the covariate range; the model default when absent.
    pub x_max: Option<f64>,
    /// Lower end of the covariate range (entry model only).
    pub x_min: Option<f64>,
    pub seed: u64,
    pub estimators: Vec<Algorithm>,
    /// Sieve size; the model default when absent.
    pub k: Option<usize>,
    pub omega: OmegaPolicy,
    pub alpha: f64,
    pub t: f64,
    pub c: f64,
    /// Observe monopoly prices without noise.
    pub noiseless: bool,
    /// Bootstrap resamples for the two-step standard error.
    pub bootstrap: usize,
    pub penalty_points: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            model: McModel::Monopoly,
            n_obs: 1000,
            n_reps: 200,
            theta_0: Vec::new(),
            x_max: None,
            x_min: None,
            seed: 42,
            estimators: vec![Algorithm::Joint, Algorithm::Mle, Algorithm::Npl, Algorithm::TwoStep],
            k: None,
            omega: OmegaPolicy::Auto,
            alpha: 0.05,
            t: 10.0,
            c: 0.95,
            noiseless: false,
            bootstrap: 0,
            penalty_points: 1000,
        }
    }
}

impl McConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: McConfig = toml::from_str(text).map_err(|e| PseError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PseError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 10 {
            return Err(PseError::Config(format!("n_obs must be at least 10, got {}", self.n_obs)));
        }
        if self.n_reps == 0 {
            return Err(PseError::Config("n_reps must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(PseError::Config("no estimators requested".into()));
        }
        if self.estimators.contains(&Algorithm::Mpec) {
            return Err(PseError::Config(
                "mpec needs finite-support data and is available through `estimate` only".into(),
            ));
        }
        if self.model == McModel::Entry && self.estimators.contains(&Algorithm::TwoStep) {
            return Err(PseError::Config("the two-step estimator is defined for the monopoly model only".into()));
        }
        let want = match self.model {
            McModel::Monopoly => 1,
            McModel::Entry => 5,
        };
        if !self.theta_0.is_empty() && self.theta_0.len() != want {
            return Err(PseError::dims("theta_0", want, self.theta_0.len()));
        }
        Ok(())
    }

    pub fn theta_0(&self) -> Vec<f64> {
        if !self.theta_0.is_empty() {
            return self.theta_0.clone();
        }
        match self.model {
            McModel::Monopoly => vec![1.0],
            McModel::Entry => ENTRY_THETA_0.to_array().to_vec(),
        }
    }

    pub fn estimation_config(&self) -> EstimationConfig {
        let base = EstimationConfig::default();
        EstimationConfig {
            k: self.k.unwrap_or(match self.model {
                McModel::Monopoly => MONOPOLY_DEFAULT_K,
                McModel::Entry => ENTRY_DEFAULT_K,
            }),
            omega: self.omega,
            selection: OmegaSelection {
                alpha: self.alpha,
                t: self.t,
                c: self.c,
                ..base.selection
            },
            penalty_points: self.penalty_points,
            options: crate::pse::EstimateOptions {
                alpha: self.alpha,
                ..base.options
            },
            two_step: TwoStepOptions {
                bootstrap: self.bootstrap,
                alpha: self.alpha,
                ..base.two_step
            },
            ..base
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicationEstimate {
    pub theta_hat: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub conf_intervals: Vec<(f64, f64)>,
    pub omega: Option<f64>,
    pub converged: bool,
}

impl From<&EstimateResult> for ReplicationEstimate {
    fn from(e: &EstimateResult) -> Self {
        Self {
            theta_hat: e.theta_hat.clone(),
            std_errors: e.std_errors.clone(),
            conf_intervals: e.conf_intervals.clone(),
            omega: e.omega,
            converged: e.converged,
        }
    }
}

/// Outcome of one estimator in one replication.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimate: Option<ReplicationEstimate>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorSummary {
    pub algorithm: Algorithm,
    pub theta_names: Vec<String>,
    /// Mean over successful replications.
    pub mean: Vec<f64>,
    /// Standard deviation across successful replications.
    pub se: Vec<f64>,
    pub failures: usize,
    pub replications: Vec<ReplicationRecord>,
}

impl EstimatorSummary {
    pub fn successes(&self) -> usize {
        self.replications.len() - self.failures
    }

    /// `theta_hat[component]` per replication, `None` for failures.
    pub fn estimates(&self, component: usize) -> Vec<Option<f64>> {
        self.replications
            .iter()
            .map(|r| r.estimate.as_ref().map(|e| e.theta_hat[component]))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct McSummary {
    pub config: McConfig,
    pub theta_0: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

impl McSummary {
    pub fn estimator(&self, algorithm: Algorithm) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.algorithm == algorithm)
    }
}

fn theta_names(model: McModel) -> Vec<String> {
    match model {
        McModel::Monopoly => vec!["theta".to_string()],
        McModel::Entry => EntryTheta::NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

/// Simulates replication `r` and runs every requested estimator on it.
fn run_replication(config: &McConfig, est_cfg: &EstimationConfig, r: usize) -> Vec<ReplicationRecord> {
    let mut rng = replication_rng(config.seed, r as u64);
    let theta_0 = config.theta_0();
    let outcome = |res: Result<EstimateResult>| match res {
        Ok(e) => ReplicationRecord {
            replication: r,
            estimate: Some(ReplicationEstimate::from(&e)),
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication: r,
            estimate: None,
            error: Some(e.to_string()),
        },
    };
    match config.model {
        McModel::Monopoly => {
            let design = MonopolyDesign {
                n: config.n_obs,
                theta_0: theta_0[0],
                x_max: config.x_max.unwrap_or(1.0),
                noiseless: config.noiseless,
            };
            let data = simulate_monopoly_with(&design, &mut rng);
            let mut cfg = *est_cfg;
            cfg.two_step.seed = rng.random();
            config
                .estimators
                .iter()
                .map(|&alg| {
                    outcome(match &data {
                        Ok(d) => fit_monopoly(d, alg, &cfg).map(|f| f.estimate),
                        Err(e) => Err(PseError::NoConvergence(format!("simulation failed: {e}"))),
                    })
                })
                .collect()
        }
        McModel::Entry => {
            let theta = EntryTheta::from_slice(&theta_0);
            let data = theta.and_then(|theta| {
                let design = EntryDesign {
                    m: config.n_obs,
                    theta,
                    x_lo: config.x_min.unwrap_or(ENTRY_X_LO),
                    x_hi: config.x_max.unwrap_or(ENTRY_X_HI),
                };
                simulate_entry_with(&design, &mut rng)
            });
            config
                .estimators
                .iter()
                .map(|&alg| {
                    outcome(match &data {
                        Ok(d) => fit_entry(d, alg, est_cfg).map(|f| f.estimate),
                        Err(e) => Err(PseError::NoConvergence(format!("simulation failed: {e}"))),
                    })
                })
                .collect()
        }
    }
}

/// Number of worker threads: `PSE_THREADS` when set to a positive integer,
/// otherwise the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(feature = "parallel")]
fn run_all(config: &McConfig, est_cfg: &EstimationConfig) -> Result<Vec<Vec<ReplicationRecord>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| PseError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..config.n_reps)
            .into_par_iter()
            .map(|r| run_replication(config, est_cfg, r))
            .collect()
    }))
}

#[cfg(not(feature = "parallel"))]
fn run_all(config: &McConfig, est_cfg: &EstimationConfig) -> Result<Vec<Vec<ReplicationRecord>>> {
    Ok((0..config.n_reps).map(|r| run_replication(config, est_cfg, r)).collect())
}

fn moments(records: &[ReplicationRecord], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let ok: Vec<&ReplicationEstimate> = records.iter().filter_map(|r| r.estimate.as_ref()).collect();
    let n = ok.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|i| ok.iter().map(|e| e.theta_hat[i]).sum::<f64>() / n)
        .collect();
    let se = (0..dim)
        .map(|i| {
            if ok.len() < 2 {
                return if ok.len() == 1 { 0.0 } else { f64::NAN };
            }
            (ok.iter().map(|e| (e.theta_hat[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    (mean, se)
}

/// Runs the experiment. Failed estimations are recorded and excluded from the
/// moments; only an invalid configuration is an error.
pub fn run_monte_carlo(config: &McConfig) -> Result<McSummary> {
    config.validate()?;
    let est_cfg = config.estimation_config();
    let per_rep = run_all(config, &est_cfg)?;
    let names = theta_names(config.model);
    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &algorithm)| {
            let replications: Vec<ReplicationRecord> = per_rep.iter().map(|rep| rep[j].clone()).collect();
            let failures = replications.iter().filter(|r| r.estimate.is_none()).count();
            let (mean, se) = moments(&replications, names.len());
            EstimatorSummary {
                algorithm,
                theta_names: names.clone(),
                mean,
                se,
                failures,
                replications,
            }
        })
        .collect();
    Ok(McSummary {
        config: config.clone(),
        theta_0: config.theta_0(),
        estimators,
    })
}
