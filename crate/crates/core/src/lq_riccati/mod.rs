//! Expectation-optimal hedging barriers through linear-quadratic control.
//!
//! For Black-Scholes dynamics with deterministic coefficients the scalar
//! Riccati equation `Ṗ = ρ² P²/(P + μ)`, `P_T = 2μ` has the closed form
//! `P_t = μ / W(½·exp(∫_t^T ρ² ds + ½))`. [`riccati_ode`] integrates the same
//! equation with RK4 and serves as an independent check. The general
//! matrix problem lives in [`general`], the observable controller in
//! [`controller`] and the efficient frontier in [`frontier`].

pub mod controller;
pub mod frontier;
pub mod general;
mod lambert;

pub use controller::{Controller, ControllerState};
pub use frontier::{frontier, FrontierPoint, FrontierSummary};
pub use general::{expectation_problem, general_lq_solve, LqProblem, LqSolution};
pub use lambert::{lambert_w, lambert_w_of_exp};

use thiserror::Error;

use crate::process_sim::{Curve, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("Lambert W is only defined here for x >= 0, got {0}")]
    LambertDomain(f64),
    #[error("mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("times must be strictly increasing and start at 0")]
    BadTimes,
    #[error("squared Sharpe ratio must be non-negative, got {value} at t = {t}")]
    NegativeSharpeSq { t: f64, value: f64 },
    #[error("drift vanishes at t = {0}; the optimal control is undefined")]
    ZeroDrift(f64),
    #[error("the Sharpe ratio vanishes on the whole horizon; the frontier degenerates")]
    DegenerateFrontier,
    #[error("the controller needs Black-Scholes dynamics with deterministic coefficients")]
    UnsupportedModel,
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("controller diverged at step {step}: z = {z}")]
    Diverged { step: usize, z: f64 },
    #[error("K is not positive definite at t = {0}")]
    KNotPositiveDefinite(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("target mean must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Solution of the scalar Riccati equation on a set of times.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    /// `Ṗ_t / P_t`, from the identity `ρ² P/(P + μ)`.
    pub log_deriv: Vec<f64>,
    pub mu: f64,
    /// Affine term of the value function; zero in the scalar reduction.
    pub g: Vec<f64>,
}

impl RiccatiSolution {
    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn p_terminal(&self) -> f64 {
        self.p[self.p.len() - 1]
    }

    /// `P_0 / P_T`, which does not depend on μ.
    pub fn decay(&self) -> f64 {
        self.p0() / self.p_terminal()
    }

    /// `P_T / (P_T − P_0)`, the frontier slope `v / m²`.
    pub fn frontier_ratio(&self) -> f64 {
        let pt = self.p_terminal();
        pt / (pt - self.p0())
    }
}

fn check_inputs(rho_sq: &Curve, mu: f64, times: &[f64]) -> Result<(), ControlError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(ControlError::NonPositiveMu(mu));
    }
    if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ControlError::BadTimes);
    }
    for (&t, &v) in rho_sq.knots().iter().zip(rho_sq.values()) {
        if v < 0.0 {
            return Err(ControlError::NegativeSharpeSq { t, value: v });
        }
    }
    Ok(())
}

/// `∫_{t_k}^T ρ² ds` for every `t_k` in `times` (last entry is `T`).
pub fn remaining_sharpe_sq(rho_sq: &Curve, times: &[f64]) -> Result<Vec<f64>, ControlError> {
    let n = times.len();
    let mut out = vec![0.0; n];
    for k in (0..n - 1).rev() {
        out[k] = out[k + 1] + rho_sq.integral(times[k], times[k + 1])?;
    }
    Ok(out)
}

/// Closed-form solution through the Lambert W function.
pub fn riccati_closed_form(rho_sq: &Curve, mu: f64, times: &[f64]) -> Result<RiccatiSolution, ControlError> {
    check_inputs(rho_sq, mu, times)?;
    let remaining = remaining_sharpe_sq(rho_sq, times)?;
    let mut p = Vec::with_capacity(times.len());
    for (k, &r) in remaining.iter().enumerate() {
        let w = if k + 1 == times.len() {
            0.5
        } else {
            // ½·e^{r + ½} = e^{r + ½ − ln 2}
            lambert_w_of_exp(r + 0.5 - std::f64::consts::LN_2)?
        };
        p.push(mu / w);
    }
    Ok(finish(rho_sq, mu, times, p))
}

fn finish(rho_sq: &Curve, mu: f64, times: &[f64], p: Vec<f64>) -> RiccatiSolution {
    let log_deriv = times.iter().zip(&p).map(|(&t, &pt)| rho_sq.value_at(t) * pt / (pt + mu)).collect();
    RiccatiSolution { times: times.to_vec(), g: vec![0.0; p.len()], p, log_deriv, mu }
}

/// Backward RK4 integration of `Ṗ = ρ² P²/(P + μ)` from `P_T = 2μ`.
///
/// Each interval between consecutive `times` is split at the knots of the
/// curve and integrated with steps no longer than `max_step`.
pub fn riccati_ode(
    rho_sq: &Curve,
    mu: f64,
    times: &[f64],
    max_step: f64,
) -> Result<RiccatiSolution, ControlError> {
    check_inputs(rho_sq, mu, times)?;
    let rhs = |t: f64, p: f64| rho_sq.value_at(t) * p * p / (p + mu);
    let n = times.len();
    let mut p = vec![0.0; n];
    p[n - 1] = 2.0 * mu;
    let knots = rho_sq.knots();
    for k in (0..n - 1).rev() {
        let (a, b) = (times[k], times[k + 1]);
        let mut cuts: Vec<f64> = knots.iter().copied().filter(|&s| s > a && s < b).collect();
        cuts.insert(0, a);
        cuts.push(b);
        let mut cur = p[k + 1];
        for w in cuts.windows(2).rev() {
            let (lo, hi) = (w[0], w[1]);
            let m = ((hi - lo) / max_step).ceil().max(1.0) as usize;
            let h = (hi - lo) / m as f64;
            for i in (0..m).rev() {
                let t1 = lo + (i + 1) as f64 * h;
                let t0 = lo + i as f64 * h;
                let th = 0.5 * (t0 + t1);
                let k1 = rhs(t1, cur);
                let k2 = rhs(th, cur - 0.5 * h * k1);
                let k3 = rhs(th, cur - 0.5 * h * k2);
                let k4 = rhs(t0, cur - h * k3);
                cur -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        p[k] = cur;
    }
    Ok(finish(rho_sq, mu, times, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(n: usize, horizon: f64) -> Vec<f64> {
        (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
    }

    #[test]
    fn terminal_value_and_zero_sharpe() {
        let t = times(10, 1.0);
        let sol = riccati_closed_form(&Curve::constant(0.0, 1.0), 1.7, &t).unwrap();
        for &p in &sol.p {
            assert!((p - 3.4).abs() < 1e-13);
        }
        assert!(sol.log_deriv.iter().all(|&d| d == 0.0));
        let sol = riccati_closed_form(&Curve::constant(0.25, 1.0), 1.7, &t).unwrap();
        assert_eq!(sol.p_terminal(), 3.4);
        // the Lambert argument at T is ½e^{½}, whose W is ½
        let w = lambert_w(0.5 * 0.5f64.exp()).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_rk4() {
        let t = times(50, 1.0);
        let rho = Curve::constant(0.25, 1.0);
        let a = riccati_closed_form(&rho, 1.0, &t).unwrap();
        let b = riccati_ode(&rho, 1.0, &t, 1e-3).unwrap();
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!(((x - y) / y).abs() < 1e-8);
        }
        assert!(a.p.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.p0() > 0.0 && a.p0() < a.p_terminal());
    }

    #[test]
    fn log_derivative_matches_finite_difference() {
        let t = times(4000, 1.0);
        let rho = Curve::new(vec![0.0, 1.0], vec![0.1, 0.6]).unwrap();
        let sol = riccati_closed_form(&rho, 0.5, &t).unwrap();
        let h = 1.0 / 4000.0;
        for &k in &[100usize, 2000, 3900] {
            let fd = (sol.p[k + 1] - sol.p[k - 1]) / (2.0 * h) / sol.p[k];
            assert!((fd - sol.log_deriv[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = times(4, 1.0);
        let rho = Curve::constant(0.25, 1.0);
        assert_eq!(riccati_closed_form(&rho, 0.0, &t), Err(ControlError::NonPositiveMu(0.0)));
        assert_eq!(riccati_closed_form(&rho, 1.0, &[0.0]), Err(ControlError::BadTimes));
        let neg = Curve::constant(-0.1, 1.0);
        assert!(matches!(riccati_closed_form(&neg, 1.0, &t), Err(ControlError::NegativeSharpeSq { .. })));
    }

    #[test]
    fn huge_sharpe_does_not_overflow() {
        let t = times(4, 1.0);
        let sol = riccati_closed_form(&Curve::constant(2000.0, 1.0), 1.0, &t).unwrap();
        assert!(sol.p0().is_finite() && sol.p0() > 0.0);
    }
}
