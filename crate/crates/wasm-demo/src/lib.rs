//! Browser bindings for the monopoly example: the sieve's cubic basis curves, a penalized
//! sieve fit at a chosen `omega`, and the automatic `omega` path. Every export
//! returns a JSON string for the page in `www/`.

use nalgebra::DVector;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pse::error::Result;
use pse::harness::{fit_monopoly, monopoly_start, simulate_monopoly, EstimationConfig, OmegaPolicy};
use pse::models::monopoly_solve;
use pse::pse::Algorithm;
use pse::sieve::{eval_basis, eval_sieve, Link, SieveSpec};

/// Points on each plotted curve.
const CURVE_POINTS: usize = 200;

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Values of the `k` sieve basis functions on `[lo, hi]`.
pub fn basis_curves_json(k: usize, lo: f64, hi: f64) -> Result<Value> {
    let knots = SieveSpec::with_basis_count(lo, hi, k, Link::Identity)?.grid;
    let xs = grid(lo, hi, CURVE_POINTS);
    let mut curves = vec![Vec::with_capacity(xs.len()); knots.basis_count()];
    for &x in &xs {
        for (c, v) in curves.iter_mut().zip(eval_basis(&knots, x)?) {
            c.push(v);
        }
    }
    Ok(json!({ "x": xs, "knots": knots.knots(), "curves": curves }))
}

fn config(k: usize, omega: OmegaPolicy) -> EstimationConfig {
    EstimationConfig {
        k,
        omega,
        ..EstimationConfig::default()
    }
}

fn curve(data: &pse::models::MonopolyDataset, k: usize, beta: &[f64], theta: f64, theta_0: f64) -> Result<Value> {
    let (model, _, _) = monopoly_start(data, &config(k, OmegaPolicy::Auto))?;
    let (lo, hi) = data.x_range();
    let beta = DVector::from_column_slice(beta);
    let xs = grid(lo, hi, CURVE_POINTS);
    let mut sieve = Vec::with_capacity(xs.len());
    let mut fitted = Vec::with_capacity(xs.len());
    let mut truth = Vec::with_capacity(xs.len());
    for &x in &xs {
        sieve.push(eval_sieve(model.spec(), &beta, x)?);
        fitted.push(if theta > 0.0 { monopoly_solve(x, theta)? } else { f64::NAN });
        truth.push(monopoly_solve(x, theta_0)?);
    }
    Ok(json!({ "x": xs, "sieve": sieve, "equilibrium": fitted, "truth": truth }))
}

fn points(data: &pse::models::MonopolyDataset) -> Value {
    json!({ "x": data.xs(), "y": data.ys() })
}

/// Simulated monopoly data and the joint estimate at a fixed `omega`.
pub fn monopoly_fit_json(n: usize, seed: u64, theta_0: f64, k: usize, omega: f64) -> Result<Value> {
    let data = simulate_monopoly(n, theta_0, 1.0, seed)?;
    let fit = fit_monopoly(&data, Algorithm::Joint, &config(k, OmegaPolicy::Fixed(omega)))?;
    let est = &fit.estimate;
    Ok(json!({
        "estimate": est,
        "data": points(&data),
        "curve": curve(&data, k, &est.beta_hat, est.theta_hat[0], theta_0)?,
    }))
}

/// Simulated monopoly data and every step of the automatic `omega` selection.
pub fn omega_path_json(n: usize, seed: u64, theta_0: f64, k: usize) -> Result<Value> {
    let data = simulate_monopoly(n, theta_0, 1.0, seed)?;
    let fit = fit_monopoly(&data, Algorithm::Joint, &config(k, OmegaPolicy::Auto))?;
    let path = fit.omega_path.expect("automatic selection records its path");
    let best = path.last().estimate.clone();
    Ok(json!({
        "converged": path.converged,
        "steps": path.steps,
        "data": points(&data),
        "curve": curve(&data, k, &best.beta_hat, best.theta_hat[0], theta_0)?,
    }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = basisCurves)]
pub fn basis_curves(k: usize, lo: f64, hi: f64) -> std::result::Result<String, JsError> {
    to_js(basis_curves_json(k, lo, hi))
}

#[wasm_bindgen(js_name = monopolyFit)]
pub fn monopoly_fit(n: usize, seed: u64, theta_0: f64, k: usize, omega: f64) -> std::result::Result<String, JsError> {
    to_js(monopoly_fit_json(n, seed, theta_0, k, omega))
}

#[wasm_bindgen(js_name = omegaPath)]
pub fn omega_path(n: usize, seed: u64, theta_0: f64, k: usize) -> std::result::Result<String, JsError> {
    to_js(omega_path_json(n, seed, theta_0, k))
}
