//! Mean / second-moment efficient frontier of the limit hedging error.
//!
//! With `r = P_0/P_T` the optimal error for multiplier `μ` has mean
//! `(1 − r)/(2μ)` and second moment `(1 − r)/(2μ)²`, so the frontier is
//! `v = m² / (1 − r)` whatever `μ`.

use super::{lambert_w_of_exp, ControlError};
use crate::process_sim::{Curve, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    /// Target mean.
    pub m: f64,
    /// Second moment on the frontier.
    pub v: f64,
    /// Multiplier that attains the point.
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierSummary {
    /// `∫_0^T ρ² dt`.
    pub sharpe_sq_integral: f64,
    /// `P_0 / P_T`.
    pub decay: f64,
    /// `P_T / (P_T − P_0)`.
    pub ratio: f64,
}

impl FrontierSummary {
    pub fn from_sharpe_sq(rho_sq: &Curve, horizon: f64) -> Result<Self, ControlError> {
        let total = rho_sq.integral(0.0, horizon)?;
        if !(total > 0.0) {
            return Err(ControlError::DegenerateFrontier);
        }
        // P_0/P_T = (μ/W_0)/(2μ)
        let w0 = lambert_w_of_exp(total + 0.5 - std::f64::consts::LN_2)?;
        let decay = 1.0 / (2.0 * w0);
        Ok(Self { sharpe_sq_integral: total, decay, ratio: 1.0 / (1.0 - decay) })
    }

    /// Mean and second moment of the optimal limit error for multiplier `mu`.
    pub fn moments(&self, mu: f64) -> (f64, f64) {
        let a = 1.0 / (2.0 * mu);
        (a * (1.0 - self.decay), a * a * (1.0 - self.decay))
    }

    /// Multiplier whose optimal error has mean `m`.
    pub fn mu_for_target(&self, m: f64) -> Result<f64, ControlError> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(ControlError::NonPositiveTarget(m));
        }
        Ok((1.0 - self.decay) / (2.0 * m))
    }

    pub fn point(&self, m: f64) -> Result<FrontierPoint, ControlError> {
        Ok(FrontierPoint { m, v: m * m * self.ratio, mu: self.mu_for_target(m)? })
    }
}

/// `ρ²` of a Black-Scholes model tabulated at its curve knots refined by
/// `refine` uniform points over `[0, horizon]`.
pub fn tabulate_sharpe_sq(model: &ModelSpec, horizon: f64, refine: usize) -> Result<Curve, ControlError> {
    let (b, s) = model.bs_curves().ok_or(ControlError::UnsupportedModel)?;
    let mut knots: Vec<f64> = (0..=refine).map(|i| horizon * i as f64 / refine as f64).collect();
    knots.extend(b.knots().iter().chain(s.knots()).copied().filter(|&t| t > 0.0 && t < horizon));
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon);
    Ok(model.sharpe_sq_curve(knots).expect("Black-Scholes model")?)
}

/// Frontier points for the requested target means.
pub fn frontier(
    model: &ModelSpec,
    horizon: f64,
    targets: &[f64],
) -> Result<(Vec<FrontierPoint>, FrontierSummary), ControlError> {
    let rho_sq = tabulate_sharpe_sq(model, horizon, 1024)?;
    let summary = FrontierSummary::from_sharpe_sq(&rho_sq, horizon)?;
    let points = targets.iter().map(|&m| summary.point(m)).collect::<Result<_, _>>()?;
    Ok((points, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq_riccati::riccati_closed_form;

    fn model() -> ModelSpec {
        ModelSpec::constant_black_scholes(100.0, 0.1, 0.2, 1.0).unwrap()
    }

    #[test]
    fn ratio_does_not_depend_on_mu() {
        let rho = Curve::constant(0.25, 1.0);
        let t: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let ratios: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&mu| riccati_closed_form(&rho, mu, &t).unwrap().frontier_ratio())
            .collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-10);
        }
        let s = FrontierSummary::from_sharpe_sq(&rho, 1.0).unwrap();
        assert!((s.ratio - ratios[0]).abs() < 1e-10);
    }

    #[test]
    fn points_lie_above_squared_mean() {
        let (pts, summary) = frontier(&model(), 1.0, &[0.5, 1.0, 2.0]).unwrap();
        assert!(summary.ratio > 1.0);
        for p in pts {
            assert!(p.v > p.m * p.m);
            let (mean, second) = summary.moments(p.mu);
            assert!((mean - p.m).abs() < 1e-12 * p.m);
            assert!((second - p.v).abs() < 1e-12 * p.v);
        }
    }

    #[test]
    fn degenerate_and_invalid_targets() {
        let flat = ModelSpec::constant_black_scholes(100.0, 0.0, 0.2, 1.0).unwrap();
        assert_eq!(frontier(&flat, 1.0, &[1.0]).unwrap_err(), ControlError::DegenerateFrontier);
        assert!(frontier(&model(), 1.0, &[-1.0]).is_err());
    }

    /// Discrete-time dynamic programming over piecewise-constant controls.
    fn dp_ratio(rho: f64, b: f64, horizon: f64, steps: usize, mu: f64) -> f64 {
        let sigma = b / rho;
        let (bt, st) = (b / 3.0, sigma / 3.0);
        let dt = horizon / steps as f64;
        let mut p = mu;
        for _ in 0..steps {
            p -= p * p * bt * bt * dt * dt
                / (p * (bt * bt * dt * dt + st * st * dt) + 0.5 * mu * st * st * dt);
        }
        mu / (mu - p)
    }

    #[test]
    fn ratio_matches_dynamic_programming() {
        let s = FrontierSummary::from_sharpe_sq(&Curve::constant(0.25, 1.0), 1.0).unwrap();
        let dp = dp_ratio(0.5, 0.1, 1.0, 16, 1.0);
        assert!(((dp - s.ratio) / s.ratio).abs() < 0.02, "{dp} vs {}", s.ratio);
    }
}
