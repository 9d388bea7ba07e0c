//! Finite-difference verification of the analytic derivative blocks of every
//! bundled model at random points.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use super::simulate::{replication_rng, simulate_entry_with, simulate_monopoly_with, EntryDesign, MonopolyDesign};
use crate::error::Result;
use crate::models::{
    check_derivatives, DiscreteEntryModel, DiscreteMonopolyModel, EntryDataset, EntryModel, EntryRecord,
    MonopolyDataset, MonopolyModel, MonopolyRecord, StructuralModel,
};

/// Central-difference step used by the suite.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheck {
    pub model: &'static str,
    pub block: &'static str,
    pub points: usize,
    /// Largest relative error over the points, denominator `max(1, |analytic|)`.
    pub max_error: f64,
}

fn accumulate<M, F>(name: &'static str, model: &M, points: usize, mut draw: F, out: &mut Vec<DerivativeCheck>) -> Result<()>
where
    M: StructuralModel,
    F: FnMut() -> (DVector<f64>, DVector<f64>),
{
    let start = out.len();
    for p in 0..points {
        let (beta, theta) = draw();
        for (i, (block, err)) in check_derivatives(model, &beta, &theta, FD_STEP)?.into_iter().enumerate() {
            if p == 0 {
                out.push(DerivativeCheck {
                    model: name,
                    block,
                    points,
                    max_error: err,
                });
            } else {
                let c = &mut out[start + i];
                c.max_error = c.max_error.max(err);
            }
        }
    }
    Ok(())
}

fn entry_theta(rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_vec(vec![
        rng.random_range(-3.0..3.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-0.5..0.5),
    ])
}

/// Checks the sieve and finite-state versions of both models at `points` random
/// `(beta, theta)` each.
pub fn derivative_suite(points: usize, seed: u64) -> Result<Vec<DerivativeCheck>> {
    let mut out = Vec::new();
    let mut rng = replication_rng(seed, 0);

    let mono = simulate_monopoly_with(
        &MonopolyDesign {
            n: 200,
            ..Default::default()
        },
        &mut rng,
    )?;
    let sieve = MonopolyModel::with_basis_count(&mono, 6, 300)?;
    let mut r1 = replication_rng(seed, 1);
    accumulate(
        "monopoly",
        &sieve,
        points,
        || {
            let beta = DVector::from_fn(6, |_, _| r1.random_range(-0.6..0.6));
            (beta, DVector::from_element(1, r1.random_range(0.3..2.0)))
        },
        &mut out,
    )?;

    let coarse: Vec<_> = mono
        .records()
        .iter()
        .map(|r| MonopolyRecord {
            x: (r.x * 10.0).ceil() / 10.0,
            y: r.y,
        })
        .collect();
    let discrete = DiscreteMonopolyModel::new(&MonopolyDataset::new(coarse)?)?;
    let s = discrete.beta_dim();
    let mut r2 = replication_rng(seed, 2);
    accumulate(
        "monopoly-discrete",
        &discrete,
        points,
        || {
            let beta = DVector::from_fn(s, |_, _| r2.random_range(-0.5..1.0));
            (beta, DVector::from_element(1, r2.random_range(0.3..2.0)))
        },
        &mut out,
    )?;

    let entry = simulate_entry_with(
        &EntryDesign {
            m: 300,
            ..Default::default()
        },
        &mut rng,
    )?;
    let sieve = EntryModel::with_basis_count(&entry, 6)?;
    let mut r3 = replication_rng(seed, 3);
    accumulate(
        "entry",
        &sieve,
        points,
        || {
            let beta = DVector::from_fn(12, |_, _| r3.random_range(-0.5..0.5));
            (beta, entry_theta(&mut r3))
        },
        &mut out,
    )?;

    let coarse: Vec<_> = entry
        .records()
        .iter()
        .map(|r| EntryRecord {
            x: (r.x * 2.0).round() / 2.0,
            ..*r
        })
        .collect();
    let discrete = DiscreteEntryModel::new(&EntryDataset::new(coarse)?)?;
    let s = discrete.beta_dim();
    let mut r4 = replication_rng(seed, 4);
    accumulate(
        "entry-discrete",
        &discrete,
        points,
        || {
            let beta = DVector::from_fn(s, |_, _| r4.random_range(0.2..0.8));
            (beta, entry_theta(&mut r4))
        },
        &mut out,
    )?;
    Ok(out)
}
