//! Simulation, Monte Carlo experiments, data ingestion and report emission.

pub mod checks;
pub mod io;
pub mod montecarlo;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use checks::{derivative_suite, DerivativeCheck};
pub use io::{load_markets_csv, load_monopoly_csv, read_markets, read_monopoly, save_markets_csv, save_monopoly_csv};
pub use montecarlo::{run_monte_carlo, thread_count, McConfig, McModel, McSummary, THREADS_ENV};
pub use pipeline::{
    entry_fit_curve, entry_start, fit_entry, fit_monopoly, monopoly_start, EstimationConfig, Fit, OmegaPolicy,
    ENTRY_DEFAULT_K, MONOPOLY_DEFAULT_K,
};
pub use report::{emit_report, render_report, ReportFormat, REPORT_SCHEMA};
pub use simulate::{simulate_entry, simulate_monopoly, ENTRY_THETA_0, ENTRY_X_HI, ENTRY_X_LO};
