//! Configuration-driven experiments and their tabular output.

pub mod config;
pub mod experiments;
pub mod table;

pub use config::{ConfigError, ExperimentConfig, LoadedConfig, OutputFormat};
pub use experiments::{
    convergence_study, frontier_study, riccati_check, run_convergence, run_frontier, run_sharpe_sweep,
    sharpe_sweep, simulate, ConvergenceRow, FrontierRow, HarnessError, SharpeRow,
};
pub use table::{emit, Cell, Metadata, ResultTable};
