//! Batch experiments behind the command-line subcommands.
//!
//! Paths are simulated once on the grid that resolves the finest scale of a
//! schedule and every coarser scale reuses them. Per-path statistics are
//! collected in path-id order and reduced with pairwise sums, so results do
//! not depend on the number of worker threads.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, LoadedConfig, RuleKindConfig, MIN_MOMENT_PATHS};
use super::table::{Cell, Metadata, ResultTable};
use crate::delta_hedge::{fill_delta, hedging_error, DeltaSpec, HedgeError};
use crate::limit_theory::{
    modified_sharpe, path_functionals, path_limit_pair, sharpe_bound, sharpe_rule_analytic,
    sharpe_sq_integral, LimitError, PathFunctionals,
};
use crate::lq_riccati::frontier::tabulate_sharpe_sq;
use crate::lq_riccati::{
    expectation_problem, general_lq_solve, riccati_closed_form, riccati_ode, ControlError, Controller,
    FrontierSummary,
};
use crate::process_sim::{ModelSpec, PathSimulator, SimError, TimeGrid};
use crate::rules::{apply_rule, Rule, RuleError};
use crate::stats::Estimate;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error at {0}")]
    Config(#[from] ConfigError),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(SimError, HedgeError, RuleError, LimitError, ControlError);

/// Moment estimates of the renormalized hedging error at one scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub trades: Estimate,
    /// `E[ε⁻¹ Z]`.
    pub mean: Estimate,
    /// `E[(ε⁻¹ Z)²]`.
    pub second: Estimate,
    pub mean_limit: Estimate,
    pub second_limit: Estimate,
    /// Paired z-scores of the estimate against the limit target.
    pub z_mean: f64,
    pub z_second: f64,
}

impl ConvergenceRow {
    fn from_columns(eps: f64, z: &[f64], trades: &[f64], m_lim: &[f64], v_lim: &[f64]) -> Self {
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        let dm: Vec<f64> = z.iter().zip(m_lim).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = sq.iter().zip(v_lim).map(|(a, b)| a - b).collect();
        let (dm, dv) = (Estimate::from_samples(&dm), Estimate::from_samples(&dv));
        Self {
            eps,
            trades: Estimate::from_samples(trades),
            mean: Estimate::from_samples(z),
            second: Estimate::from_samples(&sq),
            mean_limit: Estimate::from_samples(m_lim),
            second_limit: Estimate::from_samples(v_lim),
            z_mean: dm.mean / dm.std_err,
            z_second: dv.mean / dv.std_err,
        }
    }
}

/// Runs every rule at every scale of `schedule` on `n_paths` shared paths.
/// Returns one row list per rule, in schedule order.
pub fn convergence_study(
    model: &ModelSpec,
    spec: &DeltaSpec,
    rules: &[Rule],
    schedule: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<ConvergenceRow>>, HarnessError> {
    let sim = PathSimulator::new(model, grid, seed)?;
    let finest = schedule.iter().copied().fold(f64::INFINITY, f64::min);
    let scaled: Vec<Vec<Rule>> = rules
        .iter()
        .map(|r| schedule.iter().map(|&e| r.with_eps(e)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let reference: Vec<Rule> = rules.iter().map(|r| r.with_eps(finest)).collect::<Result<_, _>>()?;
    // per path: for each rule [mean term, second term, then (z, trades) per eps]
    let width = 2 + 2 * schedule.len();
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| -> Result<Vec<f64>, HarnessError> {
            let mut path = sim.path(id);
            fill_delta(&mut path, spec, model)?;
            let mut out = Vec::with_capacity(width * rules.len());
            for (r, at_scales) in reference.iter().zip(&scaled) {
                let pair = path_limit_pair(r, &path, model)?;
                let f = path_functionals(&pair, &path, model)?;
                out.push(f.mean_term());
                out.push(f.second_moment_term());
                for rule in at_scales {
                    let (idx, _) = apply_rule(rule, &path, model)?;
                    let res = hedging_error(&path, &idx)?;
                    out.push(res.error / rule.eps());
                    out.push(res.trades as f64);
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let col = |j: usize| -> Vec<f64> { per_path.iter().map(|p| p[j]).collect() };
    Ok((0..rules.len())
        .map(|r| {
            let base = r * width;
            let (m_lim, v_lim) = (col(base), col(base + 1));
            schedule
                .iter()
                .enumerate()
                .map(|(i, &eps)| {
                    let j = base + 2 + 2 * i;
                    ConvergenceRow::from_columns(eps, &col(j), &col(j + 1), &m_lim, &v_lim)
                })
                .collect()
        })
        .collect())
}

fn metadata(cfg: &LoadedConfig, experiment: &str, target_source: &str) -> Metadata {
    Metadata {
        experiment: experiment.into(),
        config_hash: cfg.hash(),
        seed: cfg.config.mc.seed,
        target_source: target_source.into(),
    }
}

fn require_moment_paths(cfg: &LoadedConfig) -> Result<usize, ConfigError> {
    let n = cfg.config.mc.n_paths;
    if n < MIN_MOMENT_PATHS {
        return Err(cfg.error_at(
            &["mc", "n_paths"],
            format!("moment runs need at least {MIN_MOMENT_PATHS} paths, got {n}"),
        ));
    }
    Ok(n)
}

/// Grid resolving the finest scale of the configured schedule.
fn schedule_grid(cfg: &LoadedConfig, finest: f64) -> Result<TimeGrid, HarnessError> {
    let oversample = cfg.config.rule.as_ref().map_or(128.0, |r| r.oversample);
    Ok(TimeGrid::resolving(cfg.horizon(), finest, oversample)?)
}

/// Controller for the expectation-optimal rule with mean target `target`.
fn controller_for(model: &ModelSpec, grid: TimeGrid, target: f64) -> Result<Arc<Controller>, HarnessError> {
    let rho_sq = tabulate_sharpe_sq(model, grid.horizon(), 1024)?;
    let summary = FrontierSummary::from_sharpe_sq(&rho_sq, grid.horizon())?;
    let mu = summary.mu_for_target(target)?;
    Ok(Arc::new(Controller::new(model, mu, grid)?))
}

/// Configured rule at the finest scale, with its controller attached when
/// needed.
fn configured_rule(cfg: &LoadedConfig, model: &ModelSpec, grid: TimeGrid) -> Result<Rule, HarnessError> {
    let rc = cfg.rule_config()?;
    let finest = rc.eps_schedule[rc.eps_schedule.len() - 1];
    let controller = match rc.kind {
        RuleKindConfig::OptimalEe => Some(controller_for(model, grid, rc.target_mean.expect("validated"))?),
        _ => None,
    };
    Ok(cfg.rule_at(finest, controller)?)
}

pub const CONVERGENCE_COLUMNS: [&str; 16] = [
    "eps",
    "n_paths",
    "mean_trades",
    "mean_trades_se",
    "eps2_trades",
    "m_hat",
    "m_hat_se",
    "v_hat",
    "v_hat_se",
    "m_limit",
    "m_limit_se",
    "v_limit",
    "v_limit_se",
    "z_m",
    "z_v",
    "oversample",
];

/// Moments of the renormalized hedging error for each scale of the schedule
/// against the limit moments of the configured rule; sorted by decreasing
/// scale.
pub fn run_convergence(cfg: &LoadedConfig) -> Result<ResultTable, HarnessError> {
    let n = require_moment_paths(cfg)?;
    let model = cfg.model()?;
    let spec = cfg.delta_spec()?;
    let rc = cfg.rule_config()?;
    let schedule = rc.eps_schedule.clone();
    let grid = schedule_grid(cfg, schedule[schedule.len() - 1])?;
    let rule = configured_rule(cfg, &model, grid)?;
    let rows = convergence_study(&model, &spec, &[rule], &schedule, grid, n, cfg.config.mc.seed)?;
    let mut table = ResultTable::new(
        metadata(cfg, "convergence", "limit moments on simulated paths"),
        &CONVERGENCE_COLUMNS,
    );
    for r in &rows[0] {
        table.push(vec![
            r.eps.into(),
            n.into(),
            r.trades.mean.into(),
            r.trades.std_err.into(),
            (r.eps * r.eps * r.trades.mean).into(),
            r.mean.mean.into(),
            r.mean.std_err.into(),
            r.second.mean.into(),
            r.second.std_err.into(),
            r.mean_limit.mean.into(),
            r.mean_limit.std_err.into(),
            r.second_limit.mean.into(),
            r.second_limit.std_err.into(),
            r.z_mean.into(),
            r.z_second.into(),
            rc.oversample.into(),
        ]);
    }
    Ok(table)
}

/// One row of a Sharpe sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpeRow {
    pub lambda: f64,
    pub realized: Estimate,
    pub analytic: f64,
    pub bound: f64,
}

/// Modified Sharpe ratio of the asymmetric rule for each tilt, estimated
/// from the limit functionals on `n_paths` paths of `steps` steps.
pub fn sharpe_sweep(
    model: &ModelSpec,
    horizon: f64,
    lambdas: &[f64],
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SharpeRow>, HarnessError> {
    let integral = sharpe_sq_integral(model, horizon)?;
    if !(integral > 0.0) {
        return Err(HarnessError::Numerical("the drift vanishes on the whole horizon".into()));
    }
    let bound = sharpe_bound(model, horizon)?;
    let sim = PathSimulator::new(model, TimeGrid::new(horizon, steps)?, seed)?;
    let rules: Vec<Rule> = lambdas.iter().map(|&l| Rule::sharpe(1.0, l)).collect::<Result<_, _>>()?;
    let per_path: Vec<Vec<PathFunctionals>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| -> Result<Vec<PathFunctionals>, HarnessError> {
            let path = sim.path(id);
            rules
                .iter()
                .map(|r| {
                    let pair = path_limit_pair(r, &path, model)?;
                    Ok(path_functionals(&pair, &path, model)?)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let f: Vec<PathFunctionals> = per_path.iter().map(|p| p[i]).collect();
            Ok(SharpeRow {
                lambda,
                realized: modified_sharpe(&f)?,
                analytic: sharpe_rule_analytic(lambda, integral),
                bound,
            })
        })
        .collect()
}

pub fn run_sharpe_sweep(cfg: &LoadedConfig) -> Result<ResultTable, HarnessError> {
    let n = require_moment_paths(cfg)?;
    let model = cfg.model()?;
    let sweep = cfg.config.sweep.as_ref().ok_or_else(|| cfg.error_at(&[], "missing sweep block"))?;
    let integral = sharpe_sq_integral(&model, cfg.horizon())?;
    if !(integral > 0.0) {
        return Err(cfg.error_at(&["model", "drift"], "the Sharpe sweep needs a non-zero drift").into());
    }
    let rows = sharpe_sweep(&model, cfg.horizon(), &sweep.lambdas, sweep.steps, n, cfg.config.mc.seed)?;
    let mut table = ResultTable::new(
        metadata(cfg, "sharpe-sweep", "closed-form Sharpe ratio of the tilted rule"),
        &[
            "lambda",
            "n_paths",
            "sharpe_mc",
            "sharpe_mc_se",
            "sharpe_analytic",
            "bound",
            "analytic_over_bound",
            "z",
        ],
    );
    for r in rows {
        table.push(vec![
            r.lambda.into(),
            n.into(),
            r.realized.mean.into(),
            r.realized.std_err.into(),
            r.analytic.into(),
            r.bound.into(),
            (r.analytic / r.bound).into(),
            r.realized.z_score(r.analytic).into(),
        ]);
    }
    Ok(table)
}

/// Outcome of the expectation-optimal rule for one mean target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierRow {
    pub target: f64,
    pub mu: f64,
    pub delta: f64,
    pub eps: f64,
    pub trades: Estimate,
    pub mean: Estimate,
    pub second: Estimate,
    /// Closed-form optimal mean.
    pub mean_star: f64,
    /// Closed-form optimal second moment plus `δT`.
    pub second_target: f64,
    /// Limit moments of the rule, estimated from its realized barriers.
    pub mean_limit: Estimate,
    pub second_limit: Estimate,
    pub adjoint_terminal: Estimate,
    pub adjoint_target: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn frontier_study(
    model: &ModelSpec,
    spec: &DeltaSpec,
    targets: &[f64],
    delta: f64,
    eps: f64,
    grid: TimeGrid,
    template: &Rule,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<FrontierRow>, HarnessError> {
    let sim = PathSimulator::new(model, grid, seed)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &target in targets {
        let controller = controller_for(model, grid, target)?;
        let sol = controller.solution().clone();
        let mu = sol.mu;
        let mut rule = Rule::optimal_ee(eps, delta, controller)?.with_t_min(template.t_min)?;
        rule.monitoring = template.monitoring;
        let per_path: Vec<[f64; 6]> = (0..n_paths as u64)
            .into_par_iter()
            .map(|id| -> Result<[f64; 6], HarnessError> {
                let mut path = sim.path(id);
                fill_delta(&mut path, spec, model)?;
                let (idx, trace) = apply_rule(&rule, &path, model)?;
                let res = hedging_error(&path, &idx)?;
                let pair = path_limit_pair(&rule, &path, model)?;
                let f = path_functionals(&pair, &path, model)?;
                let z = res.error / eps;
                let adjoint = trace.final_controller.map_or(f64::NAN, |s| s.z_tilde);
                Ok([z, z * z, res.trades as f64, f.mean_term(), f.second_moment_term(), adjoint])
            })
            .collect::<Result<_, _>>()?;
        let col = |j: usize| -> Estimate {
            Estimate::from_samples(&per_path.iter().map(|p| p[j]).collect::<Vec<_>>())
        };
        let a = 1.0 / (2.0 * mu);
        rows.push(FrontierRow {
            target,
            mu,
            delta,
            eps,
            trades: col(2),
            mean: col(0),
            second: col(1),
            mean_star: a * (1.0 - sol.decay()),
            second_target: a * a * (1.0 - sol.decay()) + delta * grid.horizon(),
            mean_limit: col(3),
            second_limit: col(4),
            adjoint_terminal: col(5),
            adjoint_target: -a * sol.decay(),
        });
    }
    Ok(rows)
}

pub fn run_frontier(cfg: &LoadedConfig) -> Result<ResultTable, HarnessError> {
    let n = require_moment_paths(cfg)?;
    let model = cfg.model()?;
    let spec = cfg.delta_spec()?;
    let fr = cfg.config.frontier.as_ref().ok_or_else(|| cfg.error_at(&[], "missing frontier block"))?;
    if !(sharpe_sq_integral(&model, cfg.horizon())? > 0.0) {
        return Err(cfg.error_at(&["model", "drift"], "the frontier needs a non-zero drift").into());
    }
    let grid = schedule_grid(cfg, fr.eps)?;
    let mut template = Rule::equidistant(fr.eps)?;
    if let Some(rc) = &cfg.config.rule {
        template = template.with_t_min(rc.t_min)?.with_monitoring(rc.monitoring);
    }
    let rows =
        frontier_study(&model, &spec, &fr.targets, fr.delta, fr.eps, grid, &template, n, cfg.config.mc.seed)?;
    let mut table = ResultTable::new(
        metadata(cfg, "frontier", "closed-form optimal moments"),
        &[
            "m_target",
            "mu",
            "delta",
            "eps",
            "n_paths",
            "mean_trades",
            "m_hat",
            "m_hat_se",
            "v_hat",
            "v_hat_se",
            "m_star",
            "v_star_plus_delta_t",
            "z_m",
            "z_v",
            "m_limit",
            "m_limit_se",
            "v_limit",
            "v_limit_se",
            "adjoint_mean",
            "adjoint_se",
            "adjoint_target",
        ],
    );
    for r in rows {
        table.push(vec![
            r.target.into(),
            r.mu.into(),
            r.delta.into(),
            r.eps.into(),
            n.into(),
            r.trades.mean.into(),
            r.mean.mean.into(),
            r.mean.std_err.into(),
            r.second.mean.into(),
            r.second.std_err.into(),
            r.mean_star.into(),
            r.second_target.into(),
            r.mean.z_score(r.mean_star).into(),
            r.second.z_score(r.second_target).into(),
            r.mean_limit.mean.into(),
            r.mean_limit.std_err.into(),
            r.second_limit.mean.into(),
            r.second_limit.std_err.into(),
            r.adjoint_terminal.mean.into(),
            r.adjoint_terminal.std_err.into(),
            r.adjoint_target.into(),
        ]);
    }
    Ok(table)
}

/// Closed-form Riccati solution against the RK4 oracle and the general
/// solver, for each configured multiplier.
pub fn riccati_check(cfg: &LoadedConfig) -> Result<ResultTable, HarnessError> {
    let model = cfg.model()?;
    let horizon = cfg.horizon();
    let rc = cfg.config.riccati.clone().unwrap_or_default();
    let (drift, vol) = model.bs_curves().expect("configured models are Black-Scholes");
    let rho_sq = tabulate_sharpe_sq(&model, horizon, rc.steps)?;
    let times: Vec<f64> = (0..=rc.steps).map(|i| horizon * i as f64 / rc.steps as f64).collect();
    let mut table = ResultTable::new(
        metadata(cfg, "riccati-check", "backward RK4 integration"),
        &[
            "mu",
            "p0",
            "p_terminal",
            "decay",
            "frontier_ratio",
            "closed_vs_ode",
            "general_vs_ode",
            "optimal_cost",
            "optimal_cost_closed",
        ],
    );
    for &mu in &rc.mus {
        let closed = riccati_closed_form(&rho_sq, mu, &times)?;
        let ode = riccati_ode(&rho_sq, mu, &times, horizon / rc.steps as f64 / 8.0)?;
        let general = general_lq_solve(&expectation_problem(drift, vol, mu, horizon), &times, 8)?;
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        let closed_err = closed.p.iter().zip(&ode.p).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
        let general_err = general.p.iter().zip(&ode.p).map(|(a, b)| rel(a[(0, 0)], *b)).fold(0.0, f64::max);
        let x0 = nalgebra::DVector::from_element(1, -1.0 / (2.0 * mu));
        table.push(vec![
            mu.into(),
            closed.p0().into(),
            closed.p_terminal().into(),
            closed.decay().into(),
            closed.frontier_ratio().into(),
            closed_err.into(),
            general_err.into(),
            general.optimal_cost(&x0).into(),
            (closed.p0() / (8.0 * mu * mu)).into(),
        ]);
    }
    Ok(table)
}

/// Per-path hedging outcomes of the configured rule at every scale.
pub fn simulate(cfg: &LoadedConfig) -> Result<ResultTable, HarnessError> {
    let model = cfg.model()?;
    let spec = cfg.delta_spec()?;
    let rc = cfg.rule_config()?;
    let schedule = rc.eps_schedule.clone();
    let grid = schedule_grid(cfg, schedule[schedule.len() - 1])?;
    let base = configured_rule(cfg, &model, grid)?;
    let rules: Vec<Rule> = schedule.iter().map(|&e| base.with_eps(e)).collect::<Result<_, _>>()?;
    let sim = PathSimulator::new(&model, grid, cfg.config.mc.seed)?;
    let per_path: Vec<Vec<Vec<Cell>>> = (0..cfg.config.mc.n_paths as u64)
        .into_par_iter()
        .map(|id| -> Result<Vec<Vec<Cell>>, HarnessError> {
            let mut path = sim.path(id);
            fill_delta(&mut path, &spec, &model)?;
            rules
                .iter()
                .map(|rule| {
                    let (idx, _) = apply_rule(rule, &path, &model)?;
                    let res = hedging_error(&path, &idx)?;
                    Ok(vec![
                        id.into(),
                        rule.eps().into(),
                        res.trades.into(),
                        res.error.into(),
                        (res.error / rule.eps()).into(),
                        res.benchmark.into(),
                        path.terminal_price().into(),
                    ])
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut table = ResultTable::new(
        metadata(cfg, "simulate", "none"),
        &["path_id", "eps", "trades", "error", "scaled_error", "benchmark_pnl", "y_terminal"],
    );
    for row in per_path.into_iter().flatten() {
        table.push(row);
    }
    Ok(table)
}
