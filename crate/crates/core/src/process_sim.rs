//! Fine-grid simulation of the underlying price.
//!
//! Black-Scholes dynamics with time-dependent (tabulated) drift and
//! volatility are stepped with the exact log-normal transition; general
//! diffusions `dY = b(t, Y) dt + σ(t, Y) dW` use Euler–Maruyama. Every path
//! draws from its own ChaCha stream selected by `(seed, path id)`, so paths
//! can be produced in any order or in parallel and stay bit-identical.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("time grid needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("initial price must be positive, got {0}")]
    NonPositiveInitialPrice(f64),
    #[error("volatility must be positive, got {value} at t = {t}")]
    NonPositiveVolatility { t: f64, value: f64 },
    #[error("instantaneous Sharpe ratio is not finite at t = {0}")]
    NonFiniteSharpe(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("integration bounds [{lo}, {hi}] outside curve domain [{start}, {end}]")]
    OutOfRange { lo: f64, hi: f64, start: f64, end: f64 },
    #[error("at least one path is required")]
    NoPaths,
}

/// Uniform simulation grid `t_k = k T / M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, SimError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::InvalidHorizon(horizon));
        }
        if steps < 2 {
            return Err(SimError::TooFewSteps(steps));
        }
        Ok(Self { horizon, steps })
    }

    /// Smallest uniform grid with `h <= eps² / oversample`.
    pub fn resolving(horizon: f64, eps: f64, oversample: f64) -> Result<Self, SimError> {
        let target = eps * eps / oversample;
        let steps = (horizon / target * (1.0 - 1e-12)).ceil().max(2.0) as usize;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes `M + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Nearest node to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        ((t / self.step()).round().max(0.0) as usize).min(self.steps)
    }

    /// First node with time `>= t` (up to rounding), clamped to the grid.
    pub fn ceil_index(&self, t: f64) -> usize {
        ((t / self.step() - 1e-9).ceil().max(0.0) as usize).min(self.steps)
    }
}

/// Deterministic curve tabulated at knots and linearly interpolated,
/// held flat outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, SimError> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(SimError::InvalidCurve(format!(
                "need matching knots and values with at least 2 entries (got {} and {})",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidCurve("non-finite entry".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidCurve("knots must be strictly increasing".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn constant(value: f64, horizon: f64) -> Self {
        Self { knots: vec![0.0, horizon], values: vec![value, value] }
    }

    pub fn from_fn(knots: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self, SimError> {
        let values = knots.iter().map(|&t| f(t)).collect();
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_identically_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Applies `f` at the knots, producing a new tabulated curve.
    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Curve {
        let values = self.knots.iter().zip(&self.values).map(|(&t, &v)| f(t, v)).collect();
        Curve { knots: self.knots.clone(), values }
    }

    fn segment(&self, t: f64) -> usize {
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t <= self.start() {
            return self.values[0];
        }
        if t >= self.end() {
            return self.values[self.values.len() - 1];
        }
        let i = self.segment(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    fn check_range(&self, lo: f64, hi: f64) -> Result<(), SimError> {
        let slack = 1e-12 * (1.0 + self.end().abs());
        if !(lo <= hi) || lo < self.start() - slack || hi > self.end() + slack {
            return Err(SimError::OutOfRange { lo, hi, start: self.start(), end: self.end() });
        }
        Ok(())
    }

    /// Integrates `g(v(t0), v(t1), t1 - t0)` over the linear pieces of
    /// the curve restricted to `[lo, hi]`.
    fn integrate_pieces(&self, lo: f64, hi: f64, piece: impl Fn(f64, f64, f64) -> f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut i = self.segment(lo);
        let mut a = lo;
        while a < hi && i + 1 < self.knots.len() {
            let b = self.knots[i + 1].min(hi);
            if b > a {
                acc += piece(self.value_at(a), self.value_at(b), b - a);
            }
            a = b;
            i += 1;
        }
        acc
    }

    /// `∫ v(t) dt` over `[lo, hi]`, exact for the piecewise-linear curve.
    pub fn integral(&self, lo: f64, hi: f64) -> Result<f64, SimError> {
        self.check_range(lo, hi)?;
        Ok(self.integrate_pieces(lo, hi, |fa, fb, w| 0.5 * (fa + fb) * w))
    }

    /// `∫ v(t)² dt` over `[lo, hi]`, exact for the piecewise-linear curve.
    pub fn square_integral(&self, lo: f64, hi: f64) -> Result<f64, SimError> {
        self.check_range(lo, hi)?;
        Ok(self.integrate_pieces(lo, hi, |fa, fb, w| w * (fa * fa + fa * fb + fb * fb) / 3.0))
    }
}

/// Trapezoidal integral of a tabulated curve over `[t_lo, t_hi]`.
pub fn integrated_curve(curve: &Curve, t_lo: f64, t_hi: f64) -> Result<f64, SimError> {
    curve.integral(t_lo, t_hi)
}

/// State-dependent coefficient `(t, y) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Dynamics {
    /// `dY = Y (b_t dt + σ_t dW)` with deterministic tabulated curves.
    BlackScholes { drift: Curve, vol: Curve },
    /// `dY = b(t, Y) dt + σ(t, Y) dW`, coefficients in absolute units.
    GeneralDiffusion { drift: Coefficient, vol: Coefficient },
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::BlackScholes { drift, vol } => {
                f.debug_struct("BlackScholes").field("drift", drift).field("vol", vol).finish()
            }
            Dynamics::GeneralDiffusion { .. } => f.write_str("GeneralDiffusion(..)"),
        }
    }
}

/// Underlying price model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    y0: f64,
    dynamics: Dynamics,
}

impl ModelSpec {
    pub fn black_scholes(y0: f64, drift: Curve, vol: Curve) -> Result<Self, SimError> {
        if !(y0 > 0.0 && y0.is_finite()) {
            return Err(SimError::NonPositiveInitialPrice(y0));
        }
        for (&t, &s) in vol.knots().iter().zip(vol.values()) {
            if s <= 0.0 {
                return Err(SimError::NonPositiveVolatility { t, value: s });
            }
        }
        Ok(Self { y0, dynamics: Dynamics::BlackScholes { drift, vol } })
    }

    pub fn constant_black_scholes(y0: f64, drift: f64, vol: f64, horizon: f64) -> Result<Self, SimError> {
        Self::black_scholes(y0, Curve::constant(drift, horizon), Curve::constant(vol, horizon))
    }

    /// General diffusion. A vanishing volatility is accepted here (useful for
    /// degenerate test dynamics); hedging rules that need `σ > 0` check it
    /// themselves.
    pub fn general_diffusion(
        y0: f64,
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, SimError> {
        if !(y0 > 0.0 && y0.is_finite()) {
            return Err(SimError::NonPositiveInitialPrice(y0));
        }
        Ok(Self { y0, dynamics: Dynamics::GeneralDiffusion { drift: Arc::new(drift), vol: Arc::new(vol) } })
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn is_black_scholes(&self) -> bool {
        matches!(self.dynamics, Dynamics::BlackScholes { .. })
    }

    /// Relative drift and volatility curves for the Black-Scholes kind.
    pub fn bs_curves(&self) -> Option<(&Curve, &Curve)> {
        match &self.dynamics {
            Dynamics::BlackScholes { drift, vol } => Some((drift, vol)),
            Dynamics::GeneralDiffusion { .. } => None,
        }
    }

    /// Absolute drift `b^Y(t, y)`.
    #[inline]
    pub fn abs_drift(&self, t: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::BlackScholes { drift, .. } => drift.value_at(t) * y,
            Dynamics::GeneralDiffusion { drift, .. } => drift(t, y),
        }
    }

    /// Absolute volatility `σ^Y(t, y)`.
    #[inline]
    pub fn abs_vol(&self, t: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::BlackScholes { vol, .. } => vol.value_at(t) * y,
            Dynamics::GeneralDiffusion { vol, .. } => vol(t, y),
        }
    }

    /// Instantaneous Sharpe ratio `ρ = b^Y / σ^Y`.
    pub fn sharpe(&self, t: f64, y: f64) -> f64 {
        self.abs_drift(t, y) / self.abs_vol(t, y)
    }

    /// Squared Sharpe ratio tabulated at `knots` (Black-Scholes kind only,
    /// where ρ does not depend on the price).
    pub fn sharpe_sq_curve(&self, knots: Vec<f64>) -> Option<Result<Curve, SimError>> {
        let (drift, vol) = self.bs_curves()?;
        Some(Curve::from_fn(knots, |t| {
            let r = drift.value_at(t) / vol.value_at(t);
            r * r
        }))
    }

    /// Checks the model invariants on the nodes of `grid`.
    pub fn validate_on(&self, grid: &TimeGrid) -> Result<(), SimError> {
        if let Dynamics::BlackScholes { drift, vol } = &self.dynamics {
            for k in 0..grid.len() {
                let t = grid.time(k);
                let s = vol.value_at(t);
                if s <= 0.0 {
                    return Err(SimError::NonPositiveVolatility { t, value: s });
                }
                if !(drift.value_at(t) / s).is_finite() {
                    return Err(SimError::NonFiniteSharpe(t));
                }
            }
        }
        Ok(())
    }
}

/// Simulated trajectory on a fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub path_id: u64,
    pub seed: u64,
    pub grid: TimeGrid,
    /// Price at each node.
    pub y: Vec<f64>,
    /// Benchmark strategy at each node, once filled by the hedging layer.
    pub x: Option<Vec<f64>>,
    /// Volatility of the benchmark strategy at each node.
    pub x_vol: Option<Vec<f64>>,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn terminal_price(&self) -> f64 {
        self.y[self.y.len() - 1]
    }
}

/// Independent random streams attached to one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Driving noise of the price.
    Price,
    /// Uniforms used by bridge crossing tests in the rule engine.
    Crossing,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator for `(seed, path_id, stream)`.
pub fn path_rng(seed: u64, path_id: u64, stream: Stream) -> ChaCha8Rng {
    let key = match stream {
        Stream::Price => splitmix64(seed),
        Stream::Crossing => splitmix64(seed ^ 0xC2B2_AE3D_27D4_EB4F),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(path_id);
    rng
}

/// Brownian increments `ΔW_k`, `k = 0..M`, of one path.
pub fn brownian_increments(seed: u64, path_id: u64, grid: &TimeGrid) -> Vec<f64> {
    let mut rng = path_rng(seed, path_id, Stream::Price);
    let sqrt_h = grid.step().sqrt();
    (0..grid.steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sqrt_h * z
        })
        .collect()
}

/// Euler–Maruyama path of a general diffusion driven by the given
/// Brownian increments. Also usable for the Black-Scholes kind.
pub fn euler_path(model: &ModelSpec, grid: &TimeGrid, increments: &[f64]) -> Vec<f64> {
    let h = grid.step();
    let mut y = Vec::with_capacity(grid.len());
    let mut cur = model.y0();
    y.push(cur);
    for (k, dw) in increments.iter().enumerate().take(grid.steps()) {
        let t = grid.time(k);
        cur += model.abs_drift(t, cur) * h + model.abs_vol(t, cur) * dw;
        y.push(cur);
    }
    y
}

/// Reusable path generator for a fixed `(model, grid, seed)`.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    model: ModelSpec,
    grid: TimeGrid,
    seed: u64,
    /// Per-step `(∫(b - σ²/2) dt, (∫σ² dt)^½)` for the exact log-normal step.
    log_steps: Option<Vec<(f64, f64)>>,
}

impl PathSimulator {
    pub fn new(model: &ModelSpec, grid: TimeGrid, seed: u64) -> Result<Self, SimError> {
        model.validate_on(&grid)?;
        let log_steps = match model.dynamics() {
            Dynamics::BlackScholes { drift, vol } => {
                let mut steps = Vec::with_capacity(grid.steps());
                for k in 0..grid.steps() {
                    let (a, b) = (grid.time(k), grid.time(k + 1));
                    let var =
                        vol.square_integral(a.max(vol.start()), b.min(vol.end()))? + flat_tail_sq(vol, a, b);
                    let mean =
                        drift.integral(a.max(drift.start()), b.min(drift.end()))? + flat_tail(drift, a, b);
                    steps.push((mean - 0.5 * var, var.sqrt()));
                }
                Some(steps)
            }
            Dynamics::GeneralDiffusion { .. } => None,
        };
        Ok(Self { model: model.clone(), grid, seed, log_steps })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Simulates path `path_id`.
    pub fn path(&self, path_id: u64) -> PathBundle {
        let y = match &self.log_steps {
            Some(steps) => {
                let mut rng = path_rng(self.seed, path_id, Stream::Price);
                let mut y = Vec::with_capacity(self.grid.len());
                let mut cur = self.model.y0();
                y.push(cur);
                for &(mean, sd) in steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cur *= (mean + sd * z).exp();
                    y.push(cur);
                }
                y
            }
            None => {
                let dw = brownian_increments(self.seed, path_id, &self.grid);
                euler_path(&self.model, &self.grid, &dw)
            }
        };
        PathBundle { path_id, seed: self.seed, grid: self.grid, y, x: None, x_vol: None }
    }
}

// Curves are flat outside their knot range; these cover the part of a step
// that falls outside it.
fn flat_tail(c: &Curve, a: f64, b: f64) -> f64 {
    let below = (c.start().min(b) - a).max(0.0) * c.values()[0];
    let above = (b - c.end().max(a)).max(0.0) * c.values()[c.values().len() - 1];
    below + above
}

fn flat_tail_sq(c: &Curve, a: f64, b: f64) -> f64 {
    let v0 = c.values()[0];
    let v1 = c.values()[c.values().len() - 1];
    (c.start().min(b) - a).max(0.0) * v0 * v0 + (b - c.end().max(a)).max(0.0) * v1 * v1
}

/// Simulates paths `0..n_paths` in parallel; output order is by path id.
pub fn simulate_paths(
    model: &ModelSpec,
    grid: TimeGrid,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<PathBundle>, SimError> {
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let sim = PathSimulator::new(model, grid, seed)?;
    Ok((0..n_paths as u64).into_par_iter().map(|id| sim.path(id)).collect())
}
