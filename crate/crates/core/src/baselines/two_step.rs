//! Two-step plug-in estimator: a kernel first stage for the price function, then
//! inversion of the pricing condition `theta = p e^p / x` at every observation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{local_linear_fit, Bandwidth, KernelFit};
use crate::error::Result;
use crate::models::MonopolyDataset;
use crate::pse::{Algorithm, EstimateResult};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Median,
    Mean,
}

#[derive(Clone, Copy, Debug)]
pub struct TwoStepOptions {
    pub bandwidth: Bandwidth,
    pub aggregate: Aggregate,
    /// Bootstrap resamples for the standard error; 0 skips it and reports NaN.
    pub bootstrap: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::CrossValidated,
            aggregate: Aggregate::Median,
            bootstrap: 199,
            seed: 0,
            alpha: 0.05,
        }
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(values: &[f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Median => median(values),
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
    }
}

fn plug_in(fit: &KernelFit, xs: &[f64], how: Aggregate) -> Result<f64> {
    let ratios = xs
        .iter()
        .map(|&x| fit.fitted(x).map(|p| p * p.exp() / x))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&ratios, how))
}

/// Point estimate, first-stage fit and optional bootstrap standard error. Bootstrap
/// resamples reuse the first-stage bandwidth of the full sample; resample `b` draws
/// from stream `b` of a ChaCha8 generator seeded with `seed`.
pub fn two_step_estimate(data: &MonopolyDataset, opts: &TwoStepOptions) -> Result<(EstimateResult, KernelFit)> {
    let (xs, ys) = (data.xs(), data.ys());
    let fit = local_linear_fit(&xs, &ys, opts.bandwidth)?;
    let theta = plug_in(&fit, &xs, opts.aggregate)?;

    let se = if opts.bootstrap == 0 {
        f64::NAN
    } else {
        let n = xs.len();
        let mut draws = Vec::with_capacity(opts.bootstrap);
        for b in 0..opts.bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
            let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            let bfit = local_linear_fit(&bx, &by, Bandwidth::Fixed(fit.bandwidth()))?;
            draws.push(plug_in(&bfit, &bx, opts.aggregate)?);
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() as f64 - 1.0).max(1.0);
        var.sqrt()
    };

    let loglik = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| fit.fitted(x).map(|p| -0.5 * (y - p).powi(2) - HALF_LN_2PI))
        .sum::<Result<f64>>()?;
    let est = EstimateResult::new(
        Algorithm::TwoStep,
        vec!["theta".to_string()],
        &DVector::from_element(1, theta),
        &DVector::zeros(0),
        &DVector::from_element(1, se),
        opts.alpha,
        loglik,
        0.0,
        None,
    );
    Ok((est, fit))
}
