//! Rebalancing rules: equidistant times and hitting times of barriers
//! around the last traded delta.
//!
//! A hitting rule rebalances when the delta leaves
//! `(X_last − ε·lower_t, X_last + ε·upper_t)`, with barrier coefficients
//! evaluated at the current node. Crossings are detected either at grid nodes
//! only or, in bridge mode, also between nodes using the Brownian-bridge
//! crossing probability; in both cases the trade happens at the first node
//! after the crossing.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lq_riccati::{ControlError, Controller, ControllerState};
use crate::process_sim::{path_rng, Curve, ModelSpec, PathBundle, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("path {0} has no delta values")]
    MissingDelta(u64),
    #[error("bridge monitoring needs the delta volatility on path {0}")]
    MissingDeltaVol(u64),
    #[error("non-positive barrier at t = {t}: lower {lower}, upper {upper}")]
    NonPositiveBarrier { t: f64, lower: f64, upper: f64 },
    #[error("drift vanishes at t = {0}; asymmetric Sharpe barriers are undefined")]
    ZeroDrift(f64),
    #[error("volatility must be positive, got {0}")]
    NonPositiveVol(f64),
    #[error("controller grid has {controller} steps, path grid has {path}")]
    GridMismatch { controller: usize, path: usize },
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// How barrier crossings between grid nodes are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Crossing detected when a grid node lies outside the interval.
    #[default]
    Grid,
    /// Grid detection plus a Brownian-bridge crossing test on each step.
    Bridge,
}

/// Barrier coefficients `(lower, upper)` as a function of `(t, y)`.
pub type BarrierFn = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum Barriers {
    Constant { lower: f64, upper: f64 },
    Curves { lower: Curve, upper: Curve },
    Custom(BarrierFn),
}

impl fmt::Debug for Barriers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Barriers::Constant { lower, upper } => {
                f.debug_struct("Constant").field("lower", lower).field("upper", upper).finish()
            }
            Barriers::Curves { lower, upper } => {
                f.debug_struct("Curves").field("lower", lower).field("upper", upper).finish()
            }
            Barriers::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum RuleKind {
    /// Rebalance every `eps²` years.
    Equidistant {
        eps: f64,
    },
    Hitting {
        eps: f64,
        barriers: Barriers,
    },
    /// Asymmetric barriers skewed towards the drift, see [`sharpe_barriers`].
    SharpeAsym {
        eps: f64,
        lambda: f64,
    },
    /// Barriers driven by the expectation-optimal controller, see
    /// [`optimal_ee_barriers`].
    OptimalEe {
        eps: f64,
        delta: f64,
        controller: Arc<Controller>,
    },
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub kind: RuleKind,
    /// Minimal waiting time after each rebalance.
    pub t_min: f64,
    pub monitoring: Monitoring,
    /// Hold the barriers fixed at their value at the last rebalance.
    pub frozen_barriers: bool,
    /// Keep a per-step record in the trace.
    pub record_steps: bool,
}

impl Rule {
    pub fn new(kind: RuleKind) -> Result<Self, RuleError> {
        let rule = Self {
            kind,
            t_min: 0.0,
            monitoring: Monitoring::default(),
            frozen_barriers: false,
            record_steps: false,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn equidistant(eps: f64) -> Result<Self, RuleError> {
        Self::new(RuleKind::Equidistant { eps })
    }

    pub fn constant_barriers(eps: f64, lower: f64, upper: f64) -> Result<Self, RuleError> {
        Self::new(RuleKind::Hitting { eps, barriers: Barriers::Constant { lower, upper } })
    }

    pub fn sharpe(eps: f64, lambda: f64) -> Result<Self, RuleError> {
        Self::new(RuleKind::SharpeAsym { eps, lambda })
    }

    pub fn optimal_ee(eps: f64, delta: f64, controller: Arc<Controller>) -> Result<Self, RuleError> {
        Self::new(RuleKind::OptimalEe { eps, delta, controller })
    }

    pub fn with_t_min(mut self, t_min: f64) -> Result<Self, RuleError> {
        self.t_min = t_min;
        self.validate()?;
        Ok(self)
    }

    pub fn with_monitoring(mut self, monitoring: Monitoring) -> Self {
        self.monitoring = monitoring;
        self
    }

    pub fn with_frozen_barriers(mut self, frozen: bool) -> Self {
        self.frozen_barriers = frozen;
        self
    }

    pub fn with_step_records(mut self, record: bool) -> Self {
        self.record_steps = record;
        self
    }

    pub fn eps(&self) -> f64 {
        match &self.kind {
            RuleKind::Equidistant { eps }
            | RuleKind::Hitting { eps, .. }
            | RuleKind::SharpeAsym { eps, .. }
            | RuleKind::OptimalEe { eps, .. } => *eps,
        }
    }

    /// Same rule at a different scale.
    pub fn with_eps(&self, new_eps: f64) -> Result<Self, RuleError> {
        let mut rule = self.clone();
        match &mut rule.kind {
            RuleKind::Equidistant { eps }
            | RuleKind::Hitting { eps, .. }
            | RuleKind::SharpeAsym { eps, .. }
            | RuleKind::OptimalEe { eps, .. } => *eps = new_eps,
        }
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        let eps = self.eps();
        if !(eps.is_finite() && eps > 0.0) {
            return Err(RuleError::InvalidRule(format!("eps must be positive, got {eps}")));
        }
        if !(self.t_min.is_finite() && self.t_min >= 0.0) {
            return Err(RuleError::InvalidRule(format!("t_min must be non-negative, got {}", self.t_min)));
        }
        match &self.kind {
            RuleKind::Equidistant { .. } => {}
            RuleKind::Hitting { barriers, .. } => match barriers {
                Barriers::Constant { lower, upper } => {
                    if !(*lower > 0.0 && *upper > 0.0 && lower.is_finite() && upper.is_finite()) {
                        return Err(RuleError::InvalidRule(format!(
                            "barriers must be positive, got ({lower}, {upper})"
                        )));
                    }
                }
                Barriers::Curves { lower, upper } => {
                    if lower.min_value() <= 0.0 || upper.min_value() <= 0.0 {
                        return Err(RuleError::InvalidRule("barrier curves must be positive".into()));
                    }
                }
                Barriers::Custom(_) => {}
            },
            RuleKind::SharpeAsym { lambda, .. } => {
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return Err(RuleError::InvalidRule(format!("lambda must be non-negative, got {lambda}")));
                }
            }
            RuleKind::OptimalEe { delta, .. } => {
                if !(delta.is_finite() && *delta > 0.0) {
                    return Err(RuleError::InvalidRule(format!("delta must be positive, got {delta}")));
                }
            }
        }
        Ok(())
    }
}

/// Asymmetric barriers of the Sharpe rule at `(t, y)`.
///
/// With `c = b^Y/(σ^Y)²`, the rule trades when the delta has moved by
/// `−c·e^λ·ε` or `+c·e^{−λ}·ε`; for negative drift the pair is mirrored so
/// both coefficients stay positive. Always `lower − upper = c(e^λ − e^{−λ})`.
pub fn sharpe_barriers(model: &ModelSpec, lambda: f64, t: f64, y: f64) -> Result<(f64, f64), RuleError> {
    let drift = model.abs_drift(t, y);
    let vol = model.abs_vol(t, y);
    if drift == 0.0 {
        return Err(RuleError::ZeroDrift(t));
    }
    if !(vol > 0.0) {
        return Err(RuleError::NonPositiveVol(vol));
    }
    let c = drift / (vol * vol);
    let tilt = lambda * c.signum();
    Ok((c.abs() * tilt.exp(), c.abs() * (-tilt).exp()))
}

/// Barriers of the expectation-optimal rule: difference `s_star`, product
/// `6δ/σ²` where `σ` is the absolute volatility of the price.
pub fn optimal_ee_barriers(s_star: f64, price_vol: f64, delta: f64) -> Result<(f64, f64), RuleError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(RuleError::InvalidRule(format!("delta must be positive, got {delta}")));
    }
    if !(price_vol > 0.0) {
        return Err(RuleError::NonPositiveVol(price_vol));
    }
    let root = (0.25 * s_star * s_star + 6.0 * delta / (price_vol * price_vol)).sqrt();
    let half = 0.5 * s_star;
    // the smaller root loses all precision when |s*| dominates; use the product
    let product = 6.0 * delta / (price_vol * price_vol);
    if half >= 0.0 {
        let lower = root + half;
        Ok((lower, product / lower))
    } else {
        let upper = root - half;
        Ok((product / upper, upper))
    }
}

/// Why a rebalance happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Start,
    Scheduled,
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceRecord {
    pub index: usize,
    pub time: f64,
    pub x: f64,
    /// Barrier coefficients `(lower, upper)` active from this rebalance on.
    pub barriers: Option<(f64, f64)>,
    pub exit: Exit,
    pub controller: Option<ControllerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub barriers: (f64, f64),
    pub controller: Option<ControllerState>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleTrace {
    pub rebalances: Vec<RebalanceRecord>,
    pub steps: Vec<StepRecord>,
    pub final_controller: Option<ControllerState>,
}

impl RuleTrace {
    pub fn exits(&self, side: Exit) -> usize {
        self.rebalances.iter().filter(|r| r.exit == side).count()
    }
}

/// Grid indices `round(j ε²/h)` for all `j` with `j ε² < T`.
pub fn equidistant_indices(eps: f64, path: &PathBundle) -> Vec<usize> {
    let grid = &path.grid;
    let dt = eps * eps;
    let mut out: Vec<usize> = Vec::new();
    let mut j = 0usize;
    loop {
        let t = j as f64 * dt;
        if t >= grid.horizon() * (1.0 - 1e-12) {
            break;
        }
        let k = grid.nearest_index(t);
        if out.last() != Some(&k) && k < grid.steps() {
            out.push(k);
        }
        j += 1;
    }
    out
}

/// Barrier coefficients of a rule along one path.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierPath {
    Constant((f64, f64)),
    PerNode(Vec<(f64, f64)>),
}

impl BarrierPath {
    #[inline]
    pub fn at(&self, k: usize) -> (f64, f64) {
        match self {
            BarrierPath::Constant(l) => *l,
            BarrierPath::PerNode(v) => v[k],
        }
    }
}

fn checked(t: f64, (lower, upper): (f64, f64)) -> Result<(f64, f64), RuleError> {
    if !(lower > 0.0 && upper > 0.0 && lower.is_finite() && upper.is_finite()) {
        return Err(RuleError::NonPositiveBarrier { t, lower, upper });
    }
    Ok((lower, upper))
}

/// Barrier coefficients of a hitting rule at every node of `path`,
/// evaluated at the node's own time and price, plus the controller states
/// when the rule has a controller. Barriers depend on the price path only,
/// never on past rebalances, so they can be computed up front.
pub fn barrier_path(
    rule: &Rule,
    path: &PathBundle,
    model: &ModelSpec,
) -> Result<(BarrierPath, Option<Vec<ControllerState>>), RuleError> {
    let grid = &path.grid;
    let per_node = |f: &dyn Fn(f64, f64) -> Result<(f64, f64), RuleError>| {
        path.y
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                let t = grid.time(k);
                checked(t, f(t, y)?)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    match &rule.kind {
        RuleKind::Equidistant { .. } => {
            Err(RuleError::InvalidRule("equidistant rules have no barriers".into()))
        }
        RuleKind::Hitting { barriers, .. } => match barriers {
            Barriers::Constant { lower, upper } => {
                Ok((BarrierPath::Constant(checked(0.0, (*lower, *upper))?), None))
            }
            Barriers::Curves { lower, upper } => Ok((
                BarrierPath::PerNode(per_node(&|t, _| Ok((lower.value_at(t), upper.value_at(t))))?),
                None,
            )),
            Barriers::Custom(f) => Ok((BarrierPath::PerNode(per_node(&|t, y| Ok(f(t, y)))?), None)),
        },
        RuleKind::SharpeAsym { lambda, .. } => {
            Ok((BarrierPath::PerNode(per_node(&|t, y| sharpe_barriers(model, *lambda, t, y))?), None))
        }
        RuleKind::OptimalEe { delta, controller, .. } => {
            if controller.grid().steps() != grid.steps() {
                return Err(RuleError::GridMismatch {
                    controller: controller.grid().steps(),
                    path: grid.steps(),
                });
            }
            let mut state = controller.initial_state(path.y[0]);
            let mut states = Vec::with_capacity(path.y.len());
            let mut levels = Vec::with_capacity(path.y.len());
            for (k, &y) in path.y.iter().enumerate() {
                if k > 0 {
                    controller.step(&mut state, path.y[k - 1], y)?;
                }
                let t = grid.time(k);
                levels.push(checked(t, optimal_ee_barriers(state.s_star, model.abs_vol(t, y), *delta)?)?);
                states.push(state);
            }
            Ok((BarrierPath::PerNode(levels), Some(states)))
        }
    }
}

/// Rebalancing indices and trace of `rule` on a path with delta filled.
pub fn apply_rule(
    rule: &Rule,
    path: &PathBundle,
    model: &ModelSpec,
) -> Result<(Vec<usize>, RuleTrace), RuleError> {
    rule.validate()?;
    let x = path.x.as_ref().ok_or(RuleError::MissingDelta(path.path_id))?;
    if let RuleKind::Equidistant { eps } = rule.kind {
        let idx = equidistant_indices(eps, path);
        let rebalances = idx
            .iter()
            .map(|&k| RebalanceRecord {
                index: k,
                time: path.grid.time(k),
                x: x[k],
                barriers: None,
                exit: if k == 0 { Exit::Start } else { Exit::Scheduled },
                controller: None,
            })
            .collect();
        return Ok((idx, RuleTrace { rebalances, ..Default::default() }));
    }
    let x_vol = match rule.monitoring {
        Monitoring::Grid => None,
        Monitoring::Bridge => Some(path.x_vol.as_ref().ok_or(RuleError::MissingDeltaVol(path.path_id))?),
    };
    let (levels, states) = barrier_path(rule, path, model)?;
    let mut trace = RuleTrace::default();
    let indices = detect_exits(rule, path, x, x_vol.map(|v| v.as_slice()), &levels, &mut trace);
    for r in trace.rebalances.iter_mut() {
        r.controller = states.as_ref().map(|s| s[r.index]);
    }
    if rule.record_steps {
        trace.steps = (1..path.y.len())
            .map(|k| StepRecord {
                index: k,
                barriers: levels.at(k),
                controller: states.as_ref().map(|s| s[k]),
            })
            .collect();
    }
    trace.final_controller = states.as_ref().and_then(|s| s.last().copied());
    Ok((indices, trace))
}

fn detect_exits(
    rule: &Rule,
    path: &PathBundle,
    x: &[f64],
    x_vol: Option<&[f64]>,
    levels: &BarrierPath,
    trace: &mut RuleTrace,
) -> Vec<usize> {
    let grid = &path.grid;
    let steps = grid.steps();
    let h = grid.step();
    let eps = rule.eps();
    let mut rng = x_vol.map(|_| path_rng(path.seed, path.path_id, Stream::Crossing));
    let wait_index = |k: usize| {
        if rule.t_min > 0.0 {
            grid.ceil_index(grid.time(k) + rule.t_min)
        } else {
            k
        }
    };

    let mut indices = vec![0usize];
    let mut anchor = x[0];
    let mut active = levels.at(0);
    let mut resume = wait_index(0);
    trace.rebalances.push(RebalanceRecord {
        index: 0,
        time: 0.0,
        x: anchor,
        barriers: Some(active),
        exit: Exit::Start,
        controller: None,
    });

    for k in resume.saturating_sub(1)..steps {
        let next = k + 1;
        if next < resume {
            continue;
        }
        let current = if rule.frozen_barriers { active } else { levels.at(next) };
        let lo = anchor - eps * current.0;
        let up = anchor + eps * current.1;
        let xn = x[next];
        let mut exit = if xn >= up {
            Some(Exit::Upper)
        } else if xn <= lo {
            Some(Exit::Lower)
        } else {
            None
        };
        if exit.is_none() && k >= resume {
            if let (Some(vol), Some(rng)) = (x_vol, rng.as_mut()) {
                exit = bridge_crossing(x[k], xn, lo, up, vol[k] * vol[k] * h, rng);
            }
        }
        if let Some(side) = exit {
            indices.push(next);
            anchor = xn;
            active = levels.at(next);
            resume = wait_index(next);
            trace.rebalances.push(RebalanceRecord {
                index: next,
                time: grid.time(next),
                x: xn,
                barriers: Some(active),
                exit: side,
                controller: None,
            });
        }
    }
    indices
}

/// Samples whether a Brownian bridge from `a` to `b` over a step with
/// variance `var` touched `lo` or `up`, given both endpoints lie inside.
fn bridge_crossing(a: f64, b: f64, lo: f64, up: f64, var: f64, rng: &mut impl Rng) -> Option<Exit> {
    if !(var > 0.0) {
        return None;
    }
    let p = |d0: f64, d1: f64| {
        if d0 <= 0.0 || d1 <= 0.0 {
            return 1.0;
        }
        let arg = 2.0 * d0 * d1 / var;
        if arg > 50.0 {
            0.0
        } else {
            (-arg).exp()
        }
    };
    let p_up = p(up - a, up - b);
    let p_lo = p(a - lo, b - lo);
    if p_up == 0.0 && p_lo == 0.0 {
        return None;
    }
    let u: f64 = rng.random();
    if u < p_up {
        Some(Exit::Upper)
    } else if u < p_up + (1.0 - p_up) * p_lo {
        Some(Exit::Lower)
    } else {
        None
    }
}
