//! Black-Scholes delta as the benchmark strategy, and the P&L gap caused by
//! rebalancing it only at selected grid nodes.
//!
//! Both P&L legs are left-point sums over the same fine-grid increments of
//! the price, so the hedging error measures the rebalancing rule alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process_sim::{ModelSpec, PathBundle};
use crate::stats::{norm_cdf, norm_pdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HedgeError {
    #[error("invalid option parameters: {0}")]
    InvalidSpec(String),
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("time {t} is after maturity {maturity}")]
    AfterMaturity { t: f64, maturity: f64 },
    #[error("path {0} has no delta values")]
    MissingDelta(u64),
    #[error("invalid rebalance indices: {0}")]
    BadIndices(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    #[default]
    Call,
}

/// European option whose Black-Scholes delta is hedged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSpec {
    pub strike: f64,
    /// Pricing volatility.
    pub vol: f64,
    pub maturity: f64,
    #[serde(default)]
    pub payoff: Payoff,
}

impl DeltaSpec {
    pub fn call(strike: f64, vol: f64, maturity: f64) -> Result<Self, HedgeError> {
        let spec = Self { strike, vol, maturity, payoff: Payoff::Call };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HedgeError> {
        for (name, v) in [("strike", self.strike), ("vol", self.vol), ("maturity", self.maturity)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HedgeError::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn d1(&self, tau: f64, y: f64) -> f64 {
        let sd = self.vol * tau.sqrt();
        (y.ln() - self.strike.ln()) / sd + 0.5 * sd
    }

    fn check(&self, t: f64, y: f64) -> Result<f64, HedgeError> {
        if !(y > 0.0) {
            return Err(HedgeError::NonPositivePrice(y));
        }
        let tau = self.maturity - t;
        if tau < -1e-12 * self.maturity {
            return Err(HedgeError::AfterMaturity { t, maturity: self.maturity });
        }
        Ok(tau.max(0.0))
    }
}

/// Black-Scholes call delta `Φ(d₁)`. At maturity the terminal indicator
/// `1{y > K}` is returned, with 0.5 at the money.
pub fn bs_delta(t: f64, y: f64, spec: &DeltaSpec) -> Result<f64, HedgeError> {
    let tau = spec.check(t, y)?;
    if tau == 0.0 {
        return Ok(if y > spec.strike {
            1.0
        } else if y < spec.strike {
            0.0
        } else {
            0.5
        });
    }
    Ok(norm_cdf(spec.d1(tau, y)))
}

/// Volatility of the delta process when the underlying moves with the
/// pricing volatility: `φ(d₁)/√(T − t)`, and 0 at maturity.
pub fn bs_delta_vol(t: f64, y: f64, spec: &DeltaSpec) -> Result<f64, HedgeError> {
    delta_vol_given(t, y, spec, spec.vol * y)
}

/// Volatility of the delta process when the underlying has absolute
/// volatility `price_vol`: `∂Δ/∂y · price_vol`.
pub fn delta_vol_given(t: f64, y: f64, spec: &DeltaSpec, price_vol: f64) -> Result<f64, HedgeError> {
    let tau = spec.check(t, y)?;
    if tau == 0.0 {
        return Ok(0.0);
    }
    let sqrt_tau = tau.sqrt();
    let gamma = norm_pdf(spec.d1(tau, y)) / (y * spec.vol * sqrt_tau);
    Ok(gamma * price_vol)
}

/// Fills `x` (delta) and `x_vol` (its volatility under `model`) at every
/// node of the path.
pub fn delta_path(
    mut path: PathBundle,
    spec: &DeltaSpec,
    model: &ModelSpec,
) -> Result<PathBundle, HedgeError> {
    fill_delta(&mut path, spec, model)?;
    Ok(path)
}

/// In-place variant of [`delta_path`].
pub fn fill_delta(path: &mut PathBundle, spec: &DeltaSpec, model: &ModelSpec) -> Result<(), HedgeError> {
    let n = path.y.len();
    let mut x = Vec::with_capacity(n);
    let mut xv = Vec::with_capacity(n);
    let log_strike = spec.strike.ln();
    for (k, &y) in path.y.iter().enumerate() {
        let t = path.grid.time(k);
        let tau = spec.check(t, y)?;
        if tau == 0.0 {
            x.push(bs_delta(t, y, spec)?);
            xv.push(0.0);
            continue;
        }
        // one logarithm and one erfc per node; this is the hot loop
        let sd = spec.vol * tau.sqrt();
        let d1 = (y.ln() - log_strike) / sd + 0.5 * sd;
        x.push(norm_cdf(d1));
        xv.push(norm_pdf(d1) / (y * sd) * model.abs_vol(t, y));
    }
    path.x = Some(x);
    path.x_vol = Some(xv);
    Ok(())
}

/// `∫ X dY` as the left-point sum over the fine grid.
pub fn benchmark_pnl(path: &PathBundle) -> Result<f64, HedgeError> {
    let x = path.x.as_ref().ok_or(HedgeError::MissingDelta(path.path_id))?;
    Ok(x.iter().zip(path.y.windows(2)).map(|(xk, w)| xk * (w[1] - w[0])).sum())
}

/// Outcome of hedging with a discretized strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeResult {
    /// Grid indices of the rebalancing times.
    pub indices: Vec<usize>,
    /// Number of rebalancing times up to maturity.
    pub trades: usize,
    /// Discretized minus benchmark P&L.
    pub error: f64,
    pub benchmark: f64,
    pub discretized: f64,
}

pub(crate) fn validate_indices(indices: &[usize], last: usize) -> Result<(), HedgeError> {
    match indices.first() {
        None => return Err(HedgeError::BadIndices("empty".into())),
        Some(&i) if i != 0 => return Err(HedgeError::BadIndices(format!("first index is {i}, expected 0"))),
        _ => {}
    }
    if let Some(w) = indices.windows(2).find(|w| w[1] <= w[0]) {
        return Err(HedgeError::BadIndices(format!("not increasing at {} -> {}", w[0], w[1])));
    }
    let end = indices[indices.len() - 1];
    if end > last {
        return Err(HedgeError::BadIndices(format!("index {end} beyond last node {last}")));
    }
    Ok(())
}

/// Visits every fine step `k` with the held (last rebalanced) position.
fn for_each_held(x: &[f64], indices: &[usize], steps: usize, mut f: impl FnMut(usize, f64)) {
    let mut next = 1;
    let mut held = x[0];
    for (k, &xk) in x.iter().enumerate().take(steps) {
        if next < indices.len() && indices[next] == k {
            held = xk;
            next += 1;
        }
        f(k, held);
    }
}

/// Hedging error of the strategy rebalanced at `indices`.
pub fn hedging_error(path: &PathBundle, indices: &[usize]) -> Result<HedgeResult, HedgeError> {
    let x = path.x.as_ref().ok_or(HedgeError::MissingDelta(path.path_id))?;
    let steps = path.y.len() - 1;
    validate_indices(indices, steps)?;
    let benchmark = benchmark_pnl(path)?;
    let mut discretized = 0.0;
    for_each_held(x, indices, steps, |k, held| discretized += held * (path.y[k + 1] - path.y[k]));
    let trades = indices.iter().filter(|&&i| i < steps).count();
    Ok(HedgeResult {
        indices: indices.to_vec(),
        trades,
        error: discretized - benchmark,
        benchmark,
        discretized,
    })
}

/// Drift part `∫ (X^n − X) b^Y dt` of the hedging error (left-point sum);
/// subtracting it from the error leaves the martingale part.
pub fn error_drift_part(path: &PathBundle, indices: &[usize], model: &ModelSpec) -> Result<f64, HedgeError> {
    let x = path.x.as_ref().ok_or(HedgeError::MissingDelta(path.path_id))?;
    let steps = path.y.len() - 1;
    validate_indices(indices, steps)?;
    let h = path.grid.step();
    let mut acc = 0.0;
    for_each_held(x, indices, steps, |k, held| {
        let t = path.grid.time(k);
        acc += (held - x[k]) * model.abs_drift(t, path.y[k]) * h;
    });
    Ok(acc)
}
