//! Command-line front end. Exit status: 0 on success, 1 when estimation or I/O
//! fails, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pse::baselines::{Bandwidth, TwoStepOptions};
use pse::harness::montecarlo::McModel;
use pse::harness::report::{render_fit_curve_csv, render_mc_json, render_mc_text, render_omega_path_csv, write_output};
use pse::harness::simulate::{simulate_entry_with, simulate_monopoly_with, replication_rng, EntryDesign, MonopolyDesign};
use pse::harness::{
    derivative_suite, emit_report, entry_fit_curve, entry_start, fit_entry, fit_monopoly, load_markets_csv,
    load_monopoly_csv, monopoly_start, run_monte_carlo, save_markets_csv, save_monopoly_csv, EstimationConfig,
    McConfig, OmegaPolicy, ReportFormat, ENTRY_DEFAULT_K, MONOPOLY_DEFAULT_K,
};
use pse::models::{EntryDataset, EntryTheta, MonopolyDataset};
use pse::pse::{sweep_omega, Algorithm, OmegaSelection};
use pse::{PseError, Result};

#[derive(Parser)]
#[command(name = "pse", version, about = "Penalized sieve estimation of structural models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Monopoly,
    Entry,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Joint,
    Nested,
    Amle,
    Mpec,
    Mle,
    Npl,
    Twostep,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Joint => Algorithm::Joint,
            AlgorithmArg::Nested => Algorithm::Nested,
            AlgorithmArg::Amle => Algorithm::Amle,
            AlgorithmArg::Mpec => Algorithm::Mpec,
            AlgorithmArg::Mle => Algorithm::Mle,
            AlgorithmArg::Npl => Algorithm::Npl,
            AlgorithmArg::Twostep => Algorithm::TwoStep,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate structural parameters from a CSV data set.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment.
    Montecarlo(MonteCarloArgs),
    /// Estimate along a sequence of smoothing parameters and write the path as CSV.
    SweepOmega(SweepArgs),
    /// Compare analytic derivative blocks with finite differences.
    CheckDerivatives(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Observations (monopoly) or markets (entry).
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// True parameters, comma separated; the model default when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    /// Lower covariate bound (entry).
    #[arg(long)]
    x_min: Option<f64>,
    /// Monopoly prices without measurement error.
    #[arg(long)]
    noiseless: bool,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectionArgs {
    /// Fixed smoothing parameter.
    #[arg(long, conflicts_with = "auto_omega")]
    omega: Option<f64>,
    /// Select omega by the interval-overlap rule (the default when --omega is absent).
    #[arg(long)]
    auto_omega: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Multiplicative step of the selection loop.
    #[arg(long = "t", default_value_t = 10.0)]
    t: f64,
    /// Required overlap of consecutive intervals.
    #[arg(long = "c", default_value_t = 0.95)]
    c: f64,
    /// Initial omega of the selection loop.
    #[arg(long, default_value_t = 10.0)]
    omega_start: f64,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// CSV with `x,y` (monopoly) or `walmart,kmart,spc` (entry).
    #[arg(long)]
    data: PathBuf,
    /// Keep markets with spc at least this value (entry).
    #[arg(long)]
    min_spc: Option<f64>,
    /// Number of sieve basis functions [default: 6 monopoly, 16 entry].
    #[arg(long)]
    k: Option<usize>,
}

impl DataArgs {
    fn basis_count(&self) -> usize {
        self.k.unwrap_or(match self.model {
            ModelArg::Monopoly => MONOPOLY_DEFAULT_K,
            ModelArg::Entry => ENTRY_DEFAULT_K,
        })
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Joint)]
    algorithm: AlgorithmArg,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the omega path of the selection loop as CSV.
    #[arg(long)]
    omega_path: Option<PathBuf>,
    /// Write sieve probabilities and best responses of an entry fit as CSV.
    #[arg(long)]
    fit_curve: Option<PathBuf>,
    /// Bootstrap resamples for the two-step standard error.
    #[arg(long, default_value_t = 199)]
    bootstrap: usize,
    /// Fixed first-stage bandwidth of the two-step estimator.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// TOML configuration; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    estimators: Vec<AlgorithmArg>,
    #[arg(long)]
    k: Option<usize>,
    /// `auto` or a positive number.
    #[arg(long)]
    omega: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Joint)]
    algorithm: AlgorithmArg,
    /// Comma-separated omega values.
    #[arg(long, value_delimiter = ',', default_value = "1e1,1e2,1e3,1e4,1e5,1e6,1e7,1e8")]
    omegas: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

enum Data {
    Monopoly(MonopolyDataset),
    Entry(EntryDataset),
}

fn load(args: &DataArgs) -> Result<Data> {
    Ok(match args.model {
        ModelArg::Monopoly => Data::Monopoly(load_monopoly_csv(&args.data)?),
        ModelArg::Entry => Data::Entry(load_markets_csv(&args.data, args.min_spc)?),
    })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut rng = replication_rng(a.seed, 0);
    let mut text = Vec::new();
    match a.model {
        ModelArg::Monopoly => {
            let mut d = MonopolyDesign {
                n: a.n,
                noiseless: a.noiseless,
                ..Default::default()
            };
            if let Some(&t) = a.theta.first() {
                d.theta_0 = t;
            }
            if let Some(x) = a.x_max {
                d.x_max = x;
            }
            let data = simulate_monopoly_with(&d, &mut rng)?;
            match &a.out {
                Some(p) => return save_monopoly_csv(p, &data),
                None => pse::harness::io::write_monopoly(&mut text, &data)?,
            }
        }
        ModelArg::Entry => {
            let mut d = EntryDesign {
                m: a.n,
                ..Default::default()
            };
            if !a.theta.is_empty() {
                d.theta = EntryTheta::from_slice(&a.theta)?;
            }
            d.x_lo = a.x_min.unwrap_or(d.x_lo);
            d.x_hi = a.x_max.unwrap_or(d.x_hi);
            let data = simulate_entry_with(&d, &mut rng)?;
            match &a.out {
                Some(p) => return save_markets_csv(p, &data),
                None => pse::harness::io::write_markets(&mut text, &data)?,
            }
        }
    }
    write_output(None, &String::from_utf8_lossy(&text))
}

fn estimation_config(a: &EstimateArgs) -> EstimationConfig {
    let base = EstimationConfig::default();
    let s = &a.selection;
    EstimationConfig {
        k: a.data.basis_count(),
        omega: match s.omega {
            Some(w) if !s.auto_omega => OmegaPolicy::Fixed(w),
            _ => OmegaPolicy::Auto,
        },
        selection: OmegaSelection {
            omega_1: s.omega_start,
            t: s.t,
            c: s.c,
            alpha: s.alpha,
            ..base.selection
        },
        options: pse::pse::EstimateOptions {
            alpha: s.alpha,
            ..base.options
        },
        two_step: TwoStepOptions {
            bootstrap: a.bootstrap,
            seed: a.seed,
            alpha: s.alpha,
            bandwidth: a.bandwidth.map_or(Bandwidth::CrossValidated, Bandwidth::Fixed),
            ..base.two_step
        },
        ..base
    }
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let cfg = estimation_config(a);
    let alg = Algorithm::from(a.algorithm);
    let data = load(&a.data)?;
    let fit = match &data {
        Data::Monopoly(d) => fit_monopoly(d, alg, &cfg)?,
        Data::Entry(d) => fit_entry(d, alg, &cfg)?,
    };
    if let Some(p) = &a.omega_path {
        let steps = fit.omega_path.as_ref().map_or(&[][..], |path| &path.steps[..]);
        write_output(Some(p), &render_omega_path_csv(steps)?)?;
    }
    if let Some(p) = &a.fit_curve {
        let Data::Entry(d) = &data else {
            return Err(PseError::Config("--fit-curve applies to the entry model".into()));
        };
        let rows = entry_fit_curve(d, cfg.k, &fit.estimate)?;
        write_output(Some(p), &render_fit_curve_csv(&rows)?)?;
    }
    emit_report(std::slice::from_ref(&fit.estimate), a.format.into(), a.out.as_deref())
}

fn montecarlo(a: &MonteCarloArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => McConfig::load(p)?,
        None => McConfig::default(),
    };
    if let Some(m) = a.model {
        cfg.model = match m {
            ModelArg::Monopoly => McModel::Monopoly,
            ModelArg::Entry => McModel::Entry,
        };
        if a.config.is_none() && m == ModelArg::Entry {
            cfg.estimators = vec![Algorithm::Joint, Algorithm::Mle, Algorithm::Npl];
        }
    }
    if let Some(n) = a.n {
        cfg.n_obs = n;
    }
    if let Some(r) = a.reps {
        cfg.n_reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !a.estimators.is_empty() {
        cfg.estimators = a.estimators.iter().map(|&e| e.into()).collect();
    }
    if let Some(k) = a.k {
        cfg.k = Some(k);
    }
    if let Some(w) = &a.omega {
        cfg.omega = w.parse()?;
    }
    if !a.theta.is_empty() {
        cfg.theta_0 = a.theta.clone();
    }
    cfg.noiseless |= a.noiseless;
    let summary = run_monte_carlo(&cfg)?;
    let text = match a.format {
        FormatArg::Json => render_mc_json(&summary)?,
        FormatArg::Text | FormatArg::Csv => render_mc_text(&summary),
    };
    write_output(a.out.as_deref(), &text)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = EstimationConfig {
        k: a.data.basis_count(),
        options: pse::pse::EstimateOptions {
            alpha: a.alpha,
            ..Default::default()
        },
        ..Default::default()
    };
    let alg = Algorithm::from(a.algorithm);
    let steps = match load(&a.data)? {
        Data::Monopoly(d) => {
            let (model, beta0, theta0) = monopoly_start(&d, &cfg)?;
            let theta0 = nalgebra::DVector::from_element(1, theta0);
            sweep_omega(&model, &a.omegas, alg, &theta0, &beta0, &cfg.options)?
        }
        Data::Entry(d) => {
            let (model, beta0, theta0) = entry_start(&d, &cfg)?;
            sweep_omega(&model, &a.omegas, alg, &theta0, &beta0, &cfg.options)?
        }
    };
    write_output(a.out.as_deref(), &render_omega_path_csv(&steps)?)
}

/// Returns whether every block passed.
fn check(a: &CheckArgs) -> Result<bool> {
    let checks = derivative_suite(a.points, a.seed)?;
    let mut ok = true;
    println!("{:<18} {:<26} {:>12}  status", "model", "block", "max rel err");
    for c in &checks {
        let pass = c.max_error < a.tol;
        ok &= pass;
        println!(
            "{:<18} {:<26} {:>12.3e}  {}",
            c.model,
            c.block,
            c.max_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Estimate(a) => estimate(a).map(|_| true),
        Command::Montecarlo(a) => montecarlo(a).map(|_| true),
        Command::SweepOmega(a) => sweep(a).map(|_| true),
        Command::CheckDerivatives(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
