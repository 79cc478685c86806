//! Observable approximation of the optimal adjoint process and the
//! resulting optimal barrier skew `s*`.
//!
//! Starting from `Z̃_0 = −1/(2μ)`, each grid step applies
//! `Z̃ ← Z̃·(1 − (Ṗ/P)/b · ΔY/Y)`, and the skew is
//! `s* = −3 (Ṗ/P) Z̃ / (b Y)`.

use super::{riccati_closed_form, ControlError, RiccatiSolution};
use crate::process_sim::{ModelSpec, TimeGrid};

/// Per-path controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    /// Grid index the state refers to.
    pub index: usize,
    pub z_tilde: f64,
    pub s_star: f64,
}

/// Immutable controller data on a fixed grid; shareable across paths.
#[derive(Debug, Clone)]
pub struct Controller {
    grid: TimeGrid,
    solution: RiccatiSolution,
    drift: Vec<f64>,
}

const DIVERGENCE: f64 = 1e150;

impl Controller {
    /// Builds the controller for Black-Scholes dynamics on `grid`, with the
    /// squared Sharpe ratio tabulated at the grid nodes.
    pub fn new(model: &ModelSpec, mu: f64, grid: TimeGrid) -> Result<Self, ControlError> {
        let nodes = grid.nodes();
        let rho_sq = model.sharpe_sq_curve(nodes.clone()).ok_or(ControlError::UnsupportedModel)??;
        let solution = riccati_closed_form(&rho_sq, mu, &nodes)?;
        Self::from_solution(solution, model, grid)
    }

    pub fn from_solution(
        solution: RiccatiSolution,
        model: &ModelSpec,
        grid: TimeGrid,
    ) -> Result<Self, ControlError> {
        let (drift_curve, _) = model.bs_curves().ok_or(ControlError::UnsupportedModel)?;
        if solution.times.len() != grid.len() {
            return Err(ControlError::Dimension(format!(
                "solution has {} nodes, grid has {}",
                solution.times.len(),
                grid.len()
            )));
        }
        let mut drift = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let t = grid.time(k);
            let b = drift_curve.value_at(t);
            if b == 0.0 {
                return Err(ControlError::ZeroDrift(t));
            }
            drift.push(b);
        }
        Ok(Self { grid, solution, drift })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn solution(&self) -> &RiccatiSolution {
        &self.solution
    }

    pub fn mu(&self) -> f64 {
        self.solution.mu
    }

    /// `s*` at node `k` for adjoint value `z` and price `y`.
    pub fn s_star(&self, k: usize, z: f64, y: f64) -> f64 {
        -3.0 * self.solution.log_deriv[k] * z / (self.drift[k] * y)
    }

    pub fn initial_state(&self, y0: f64) -> ControllerState {
        let z = -1.0 / (2.0 * self.mu());
        ControllerState { index: 0, z_tilde: z, s_star: self.s_star(0, z, y0) }
    }

    /// One step of the multiplicative update from `y_t` to `y_next`.
    pub fn controller_step(
        &self,
        state: ControllerState,
        y_t: f64,
        y_next: f64,
    ) -> Result<ControllerState, ControlError> {
        if !(y_t > 0.0) {
            return Err(ControlError::NonPositivePrice(y_t));
        }
        if !(y_next > 0.0) {
            return Err(ControlError::NonPositivePrice(y_next));
        }
        let k = state.index;
        let gain = self.solution.log_deriv[k] / self.drift[k];
        let z = state.z_tilde * (1.0 - gain * (y_next - y_t) / y_t);
        if !z.is_finite() || z.abs() > DIVERGENCE {
            return Err(ControlError::Diverged { step: k + 1, z });
        }
        Ok(ControllerState { index: k + 1, z_tilde: z, s_star: self.s_star(k + 1, z, y_next) })
    }

    /// In-place variant of [`Controller::controller_step`].
    pub fn step(&self, state: &mut ControllerState, y_t: f64, y_next: f64) -> Result<(), ControlError> {
        *state = self.controller_step(*state, y_t, y_next)?;
        Ok(())
    }

    /// Runs the controller along a whole price path.
    pub fn run(&self, y: &[f64]) -> Result<ControllerState, ControlError> {
        let mut state = self.initial_state(y[0]);
        for w in y.windows(2) {
            self.step(&mut state, w[0], w[1])?;
        }
        Ok(state)
    }
}
