//! Seeded data generators. Every replication draws from its own ChaCha8 stream,
//! so results do not depend on execution order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{PseError, Result};
use crate::models::{
    entry_solve_equilibrium, lambert_w, EntryDataset, EntryRecord, EntryTheta, MonopolyDataset, MonopolyRecord,
};

const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Generator for replication `stream` of an experiment seeded with `seed`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonopolyDesign {
    pub n: usize,
    pub theta_0: f64,
    pub x_max: f64,
    /// Observe prices without measurement error.
    pub noiseless: bool,
}

impl Default for MonopolyDesign {
    fn default() -> Self {
        Self {
            n: 1000,
            theta_0: 1.0,
            x_max: 1.0,
            noiseless: false,
        }
    }
}

/// `x ~ U(0, x_max]` and `y = W(theta_0 x) + e` with `e ~ N(0, 1)`.
pub fn simulate_monopoly_with(design: &MonopolyDesign, rng: &mut impl Rng) -> Result<MonopolyDataset> {
    if !(design.theta_0 > 0.0) || !(design.x_max > 0.0) {
        return Err(PseError::DomainError(format!(
            "monopoly simulation needs theta_0 > 0 and x_max > 0, got {} and {}",
            design.theta_0, design.x_max
        )));
    }
    if design.n == 0 {
        return Err(PseError::DomainError("cannot simulate an empty monopoly sample".into()));
    }
    let mut records = Vec::with_capacity(design.n);
    for _ in 0..design.n {
        // 1 - U lies in (0, 1], which keeps x away from zero.
        let x = design.x_max * (1.0 - rng.random::<f64>());
        let noise: f64 = rng.sample(StandardNormal);
        let p = lambert_w(design.theta_0 * x)?;
        records.push(MonopolyRecord {
            x,
            y: if design.noiseless { p } else { p + noise },
        });
    }
    MonopolyDataset::new(records)
}

pub fn simulate_monopoly(n: usize, theta_0: f64, x_max: f64, seed: u64) -> Result<MonopolyDataset> {
    let design = MonopolyDesign {
        n,
        theta_0,
        x_max,
        noiseless: false,
    };
    simulate_monopoly_with(&design, &mut replication_rng(seed, 0))
}

/// Default entry parameters and covariate range for synthetic markets.
pub const ENTRY_THETA_0: EntryTheta = EntryTheta {
    pi_w: -20.65,
    delta_w: 0.50,
    pi_k: -23.55,
    delta_k: -1.95,
    gamma: 2.51,
};
pub const ENTRY_X_LO: f64 = 7.25;
pub const ENTRY_X_HI: f64 = 10.66;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryDesign {
    pub m: usize,
    pub theta: EntryTheta,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Default for EntryDesign {
    fn default() -> Self {
        Self {
            m: 2000,
            theta: ENTRY_THETA_0,
            x_lo: ENTRY_X_LO,
            x_hi: ENTRY_X_HI,
        }
    }
}

/// `x ~ U[x_lo, x_hi]`, equilibrium entry probabilities at `x`, then independent
/// Bernoulli entry decisions.
pub fn simulate_entry_with(design: &EntryDesign, rng: &mut impl Rng) -> Result<EntryDataset> {
    if design.m == 0 {
        return Err(PseError::DomainError("cannot simulate zero markets".into()));
    }
    if !(design.x_lo < design.x_hi) {
        return Err(PseError::InvalidRange {
            lo: design.x_lo,
            hi: design.x_hi,
        });
    }
    if !design.theta.is_finite() {
        return Err(PseError::DomainError("entry parameters must be finite".into()));
    }
    let mut records = Vec::with_capacity(design.m);
    for _ in 0..design.m {
        let x = rng.random_range(design.x_lo..=design.x_hi);
        let (p_w, p_k) = entry_solve_equilibrium(x, &design.theta, EQUILIBRIUM_TOL)?;
        let d_w = (rng.random::<f64>() < p_w) as u8;
        let d_k = (rng.random::<f64>() < p_k) as u8;
        records.push(EntryRecord { d_w, d_k, x });
    }
    EntryDataset::new(records)
}

pub fn simulate_entry(m: usize, theta: &EntryTheta, x_lo: f64, x_hi: f64, seed: u64) -> Result<EntryDataset> {
    let design = EntryDesign {
        m,
        theta: *theta,
        x_lo,
        x_hi,
    };
    simulate_entry_with(&design, &mut replication_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::logistic;

    #[test]
    fn monopoly_is_deterministic() {
        let a = simulate_monopoly(50, 1.0, 1.0, 7).unwrap();
        let b = simulate_monopoly(50, 1.0, 1.0, 7).unwrap();
        assert_eq!(a.records(), b.records());
        let c = simulate_monopoly(50, 1.0, 1.0, 8).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn streams_differ() {
        let d = MonopolyDesign::default();
        let a = simulate_monopoly_with(&d, &mut replication_rng(1, 0)).unwrap();
        let b = simulate_monopoly_with(&d, &mut replication_rng(1, 1)).unwrap();
        assert_ne!(a.records(), b.records());
    }

    #[test]
    fn monopoly_mean_matches_integral() {
        // Simpson quadrature of int_0^1 W(x) dx.
        let m = 2000;
        let h = 1.0 / m as f64;
        let integral: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * lambert_w(i as f64 * h).unwrap()
            })
            .sum::<f64>()
            * h
            / 3.0;
        let n = 100_000;
        let data = simulate_monopoly(n, 1.0, 1.0, 3).unwrap();
        let mean = data.ys().iter().sum::<f64>() / n as f64;
        assert!((mean - integral).abs() < 0.02, "{mean} vs {integral}");
        assert!(data.xs().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn zero_sample_is_an_error() {
        assert!(simulate_monopoly(0, 1.0, 1.0, 1).is_err());
        assert!(simulate_monopoly(5, -1.0, 1.0, 1).is_err());
    }

    #[test]
    fn zero_parameters_give_even_odds() {
        let m = 4000;
        let data = simulate_entry(m, &EntryTheta::default(), 0.0, 1.0, 11).unwrap();
        let (fw, fk) = data.entry_rates();
        let tol = 3.0 * 0.5 / (m as f64).sqrt();
        assert!((fw - 0.5).abs() < tol && (fk - 0.5).abs() < tol, "{fw} {fk}");
    }

    #[test]
    fn decoupled_game_matches_logistic() {
        let theta = EntryTheta {
            pi_w: -1.0,
            delta_w: 0.0,
            pi_k: 0.5,
            delta_k: 0.0,
            gamma: 0.8,
        };
        let data = simulate_entry(20_000, &theta, 0.0, 2.0, 5).unwrap();
        for bin in 0..4 {
            let (lo, hi) = (0.5 * bin as f64, 0.5 * (bin + 1) as f64);
            let recs: Vec<_> = data.records().iter().filter(|r| r.x >= lo && r.x < hi).collect();
            let n = recs.len() as f64;
            let fw = recs.iter().map(|r| r.d_w as f64).sum::<f64>() / n;
            let expected: f64 = recs.iter().map(|r| logistic(theta.pi_w + theta.gamma * r.x)).sum::<f64>() / n;
            assert!((fw - expected).abs() < 4.0 * (0.25 / n).sqrt(), "bin {bin}: {fw} vs {expected}");
        }
    }

    #[test]
    fn entry_is_deterministic() {
        let a = simulate_entry(30, &ENTRY_THETA_0, ENTRY_X_LO, ENTRY_X_HI, 2).unwrap();
        let b = simulate_entry(30, &ENTRY_THETA_0, ENTRY_X_LO, ENTRY_X_HI, 2).unwrap();
        assert_eq!(a.records(), b.records());
    }
}
