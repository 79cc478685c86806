//! Small-scale limit of the renormalized hedging error.
//!
//! A hitting rule with barrier coefficients `(lower, upper)` has local skew
//! `s = lower − upper` and local second moment `a² = s² + lower·upper`. The
//! limit error is
//!
//! ```text
//! Z* = ⅓ ∫ s dY + 6^{-½} ∫ (a² − ⅔ s²)^{½} σ^Y dB
//! ```
//!
//! with `B` independent of everything else, so its moments follow from
//! path functionals of `(s, a², Y)` alone:
//!
//! ```text
//! m   = ⅓ E[∫ s dY]
//! v   = ⅑ E[(∫ s dY)²] + ⅙ E[∫ (a² − ⅔ s²)(σ^Y)² dt]
//! v_c = ⅑ E[∫ s² (σ^Y)² dt] + ⅙ E[∫ (a² − ⅔ s²)(σ^Y)² dt]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process_sim::{ModelSpec, PathBundle, SimError};
use crate::rules::{barrier_path, Rule, RuleError, RuleKind};
use crate::stats::{pairwise_sum, ratio_to_root, Estimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("barriers must be positive, got ({lower}, {upper})")]
    NonPositiveBarrier { lower: f64, upper: f64 },
    #[error("no positive barrier pair for a² = {a2} <= s² = {s_sq}")]
    Degenerate { s_sq: f64, a2: f64 },
    #[error("invalid limit pair at node {index}: a² − ⅔s² = {value}")]
    InvalidPair { index: usize, value: f64 },
    #[error("path {0} has no delta volatility")]
    MissingDeltaVol(u64),
    #[error("pair has {pair} nodes, path has {path}")]
    LengthMismatch { pair: usize, path: usize },
    #[error("second moment of the continuous part vanishes")]
    ZeroContinuousMoment,
    #[error("no paths supplied")]
    NoPaths,
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Barriers,
    Equidistant,
    Given,
}

/// `(s, a²)` tabulated at the nodes of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPair {
    pub s: Vec<f64>,
    pub a2: Vec<f64>,
    pub provenance: Provenance,
}

/// `(s, a²)` of a single barrier pair.
pub fn limit_pair_point(lower: f64, upper: f64) -> Result<(f64, f64), LimitError> {
    if !(lower > 0.0 && upper > 0.0) {
        return Err(LimitError::NonPositiveBarrier { lower, upper });
    }
    let s = lower - upper;
    Ok((s, s * s + lower * upper))
}

pub fn limit_pair_from_barriers(lower: &[f64], upper: &[f64]) -> Result<LimitPair, LimitError> {
    if lower.len() != upper.len() {
        return Err(LimitError::LengthMismatch { pair: lower.len(), path: upper.len() });
    }
    let mut s = Vec::with_capacity(lower.len());
    let mut a2 = Vec::with_capacity(lower.len());
    for (&l, &u) in lower.iter().zip(upper) {
        let (sk, ak) = limit_pair_point(l, u)?;
        s.push(sk);
        a2.push(ak);
    }
    Ok(LimitPair { s, a2, provenance: Provenance::Barriers })
}

/// Positive barriers `(lower, upper)` with the given `(s, a²)`: `upper` and
/// `−lower` are the roots of `x² + s x + s² − a² = 0`.
pub fn barriers_from_limit_pair(s: f64, a2: f64) -> Result<(f64, f64), LimitError> {
    let s_sq = s * s;
    if !(a2 > s_sq) {
        return Err(LimitError::Degenerate { s_sq, a2 });
    }
    let root = (4.0 * a2 - 3.0 * s_sq).sqrt();
    // the root with a cancellation-free form is taken directly, the other
    // one from the product lower·upper = a² − s²
    if s >= 0.0 {
        let lower = 0.5 * (s + root);
        Ok((lower, (a2 - s_sq) / lower))
    } else {
        let upper = 0.5 * (root - s);
        Ok(((a2 - s_sq) / upper, upper))
    }
}

/// Pair of the equidistant rule: `s = 0`, `a² = 3(σ^X)²`.
pub fn limit_pair_equidistant(x_vol: &[f64]) -> LimitPair {
    LimitPair {
        s: vec![0.0; x_vol.len()],
        a2: x_vol.iter().map(|v| 3.0 * v * v).collect(),
        provenance: Provenance::Equidistant,
    }
}

/// `(lower, upper)` barrier coefficients of `rule` at every node of `path`.
pub fn barrier_curves(
    rule: &Rule,
    path: &PathBundle,
    model: &ModelSpec,
) -> Result<(Vec<f64>, Vec<f64>), LimitError> {
    let (levels, _) = barrier_path(rule, path, model)?;
    Ok((0..path.y.len()).map(|k| levels.at(k)).unzip())
}

/// Limit pair of `rule` along `path`.
pub fn path_limit_pair(rule: &Rule, path: &PathBundle, model: &ModelSpec) -> Result<LimitPair, LimitError> {
    if let RuleKind::Equidistant { .. } = rule.kind {
        let xv = path.x_vol.as_ref().ok_or(LimitError::MissingDeltaVol(path.path_id))?;
        return Ok(limit_pair_equidistant(xv));
    }
    let (lower, upper) = barrier_curves(rule, path, model)?;
    limit_pair_from_barriers(&lower, &upper)
}

/// Path functionals entering the limit moments (left-point sums).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFunctionals {
    /// `∫ s dY`.
    pub skew_pnl: f64,
    /// `∫ (a² − ⅔ s²)(σ^Y)² dt`.
    pub noise: f64,
    /// `∫ s² (σ^Y)² dt`.
    pub skew_quadratic: f64,
    /// `∫ (1 + ρ²)(a² + s²)(σ^Y)² dt`, the integrability diagnostic.
    pub integrability: f64,
}

impl PathFunctionals {
    pub fn mean_term(&self) -> f64 {
        self.skew_pnl / 3.0
    }

    pub fn second_moment_term(&self) -> f64 {
        self.skew_pnl * self.skew_pnl / 9.0 + self.noise / 6.0
    }

    pub fn continuous_term(&self) -> f64 {
        self.skew_quadratic / 9.0 + self.noise / 6.0
    }
}

pub fn path_functionals(
    pair: &LimitPair,
    path: &PathBundle,
    model: &ModelSpec,
) -> Result<PathFunctionals, LimitError> {
    if pair.s.len() != path.y.len() || pair.a2.len() != path.y.len() {
        return Err(LimitError::LengthMismatch { pair: pair.s.len(), path: path.y.len() });
    }
    let h = path.grid.step();
    let mut out = PathFunctionals { skew_pnl: 0.0, noise: 0.0, skew_quadratic: 0.0, integrability: 0.0 };
    for k in 0..path.y.len() - 1 {
        let (s, a2, y) = (pair.s[k], pair.a2[k], path.y[k]);
        let inner = a2 - 2.0 / 3.0 * s * s;
        if inner < 0.0 {
            return Err(LimitError::InvalidPair { index: k, value: inner });
        }
        let t = path.grid.time(k);
        let vol = model.abs_vol(t, y);
        let vol_sq = vol * vol;
        let rho = model.abs_drift(t, y) / vol;
        out.skew_pnl += s * (path.y[k + 1] - y);
        out.noise += inner * vol_sq * h;
        out.skew_quadratic += s * s * vol_sq * h;
        out.integrability += (1.0 + rho * rho) * (a2 + s * s) * vol_sq * h;
    }
    Ok(out)
}

/// Monte Carlo estimates of the limit moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitMoments {
    pub m: Estimate,
    pub v: Estimate,
    pub v_c: Estimate,
    pub integrability: Estimate,
}

pub fn limit_moments_mc(functionals: &[PathFunctionals]) -> Result<LimitMoments, LimitError> {
    if functionals.is_empty() {
        return Err(LimitError::NoPaths);
    }
    let col = |f: fn(&PathFunctionals) -> f64| -> Vec<f64> { functionals.iter().map(f).collect() };
    Ok(LimitMoments {
        m: Estimate::from_samples(&col(PathFunctionals::mean_term)),
        v: Estimate::from_samples(&col(PathFunctionals::second_moment_term)),
        v_c: Estimate::from_samples(&col(PathFunctionals::continuous_term)),
        integrability: Estimate::from_samples(&col(|f| f.integrability)),
    })
}

/// Modified Sharpe ratio `m / √v_c` with a delta-method standard error.
pub fn modified_sharpe(functionals: &[PathFunctionals]) -> Result<Estimate, LimitError> {
    if functionals.is_empty() {
        return Err(LimitError::NoPaths);
    }
    let num: Vec<f64> = functionals.iter().map(PathFunctionals::mean_term).collect();
    let den: Vec<f64> = functionals.iter().map(PathFunctionals::continuous_term).collect();
    if pairwise_sum(&den) <= 0.0 {
        return Err(LimitError::ZeroContinuousMoment);
    }
    Ok(ratio_to_root(&num, &den))
}

/// `(√6/3)·√I`, with `I = E[∫ρ² dt]`: the supremum of the modified Sharpe
/// ratio over admissible rules.
pub fn sharpe_bound_from_integral(sharpe_sq_integral: f64) -> f64 {
    6f64.sqrt() / 3.0 * sharpe_sq_integral.sqrt()
}

// 8-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 4] =
    [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] =
    [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

/// `∫_0^T ρ_t² dt` for Black-Scholes dynamics, by composite Gauss–Legendre
/// between the curve knots.
pub fn sharpe_sq_integral(model: &ModelSpec, horizon: f64) -> Result<f64, LimitError> {
    let (b, s) = model
        .bs_curves()
        .ok_or_else(|| RuleError::InvalidRule("quadrature needs deterministic coefficients".into()))?;
    let mut cuts: Vec<f64> =
        b.knots().iter().chain(s.knots()).copied().filter(|&t| t > 0.0 && t < horizon).collect();
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let f = |t: f64| {
        let r = b.value_at(t) / s.value_at(t);
        r * r
    };
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let pieces = 16;
        let step = (w[1] - w[0]) / pieces as f64;
        for i in 0..pieces {
            acc += gauss_legendre(&f, w[0] + i as f64 * step, w[0] + (i + 1) as f64 * step);
        }
    }
    Ok(acc)
}

/// Sharpe bound for deterministic coefficients.
pub fn sharpe_bound(model: &ModelSpec, horizon: f64) -> Result<f64, LimitError> {
    Ok(sharpe_bound_from_integral(sharpe_sq_integral(model, horizon)?))
}

/// Sharpe bound estimated from simulated paths (any dynamics).
pub fn sharpe_bound_mc(paths: &[PathBundle], model: &ModelSpec) -> Result<f64, LimitError> {
    if paths.is_empty() {
        return Err(LimitError::NoPaths);
    }
    let per_path: Vec<f64> = paths
        .iter()
        .map(|p| {
            let h = p.grid.step();
            (0..p.y.len() - 1)
                .map(|k| {
                    let r = model.sharpe(p.grid.time(k), p.y[k]);
                    r * r * h
                })
                .sum()
        })
        .collect();
    Ok(sharpe_bound_from_integral(pairwise_sum(&per_path) / paths.len() as f64))
}

/// Modified Sharpe ratio of the asymmetric Sharpe rule with tilt `lambda`:
/// `(√6/3)·√I·q/√(q² + 1)` with `q = e^λ − e^{−λ}`.
pub fn sharpe_rule_analytic(lambda: f64, sharpe_sq_integral: f64) -> f64 {
    let q = lambda.exp() - (-lambda).exp();
    sharpe_bound_from_integral(sharpe_sq_integral) * q / (q * q + 1.0).sqrt()
}

/// `κ = (σ^Y/σ^X)²` at the nodes before `T − h`; the delta volatility
/// vanishes at maturity, so later nodes are excluded.
pub fn kappa_curve(path: &PathBundle, model: &ModelSpec) -> Result<Vec<f64>, LimitError> {
    let xv = path.x_vol.as_ref().ok_or(LimitError::MissingDeltaVol(path.path_id))?;
    let cutoff = path.grid.horizon() - path.grid.step();
    Ok((0..path.y.len())
        .take_while(|&k| path.grid.time(k) <= cutoff * (1.0 + 1e-12))
        .map(|k| {
            let r = model.abs_vol(path.grid.time(k), path.y[k]) / xv[k];
            r * r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process_sim::{Curve, PathSimulator, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_examples() {
        assert_eq!(limit_pair_point(1.0, 1.0).unwrap(), (0.0, 1.0));
        assert_eq!(limit_pair_point(2.0, 1.0).unwrap(), (1.0, 3.0));
        assert_eq!(barriers_from_limit_pair(0.0, 1.0).unwrap(), (1.0, 1.0));
        let (l, u) = barriers_from_limit_pair(1.0, 3.0).unwrap();
        assert!((l - 2.0).abs() < 1e-15 && (u - 1.0).abs() < 1e-15);
        assert!(matches!(barriers_from_limit_pair(2.0, 4.0), Err(LimitError::Degenerate { .. })));
        assert!(limit_pair_point(0.0, 1.0).is_err());
    }

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let l: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
            let u: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
            let (s, a2) = limit_pair_point(l, u).unwrap();
            let (l2, u2) = barriers_from_limit_pair(s, a2).unwrap();
            assert!((l2 - l).abs() <= 1e-12 * l.max(1.0), "{l} {u} -> {l2} {u2}");
            assert!((u2 - u).abs() <= 1e-12 * u.max(1.0), "{l} {u} -> {l2} {u2}");
        }
    }

    #[test]
    fn equidistant_pair() {
        let p = limit_pair_equidistant(&[0.5, 0.0]);
        assert_eq!(p.a2, vec![0.75, 0.0]);
        assert_eq!(p.s, vec![0.0, 0.0]);
    }

    fn arithmetic_model(b: f64, sigma: f64) -> ModelSpec {
        ModelSpec::general_diffusion(100.0, move |_, _| b, move |_, _| sigma).unwrap()
    }

    fn run(model: &ModelSpec, s: f64, a2: f64, n: u64, steps: usize) -> (LimitMoments, Vec<PathFunctionals>) {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let sim = PathSimulator::new(model, grid, 12).unwrap();
        let pair =
            LimitPair { s: vec![s; grid.len()], a2: vec![a2; grid.len()], provenance: Provenance::Given };
        let f: Vec<PathFunctionals> =
            (0..n).map(|i| path_functionals(&pair, &sim.path(i), model).unwrap()).collect();
        (limit_moments_mc(&f).unwrap(), f)
    }

    #[test]
    fn zero_skew_moments() {
        let m = ModelSpec::constant_black_scholes(100.0, 0.1, 0.2, 1.0).unwrap();
        let (mom, f) = run(&m, 0.0, 1.0, 200, 100);
        assert_eq!(mom.m.mean, 0.0);
        let direct: Vec<f64> = f.iter().map(|x| x.noise / 6.0).collect();
        assert_eq!(mom.v.mean, Estimate::from_samples(&direct).mean);
        assert!(modified_sharpe(&f).unwrap().mean == 0.0);
    }

    #[test]
    fn constant_coefficients_match_gaussian_closed_form() {
        let (b, sigma, s, a2) = (0.8, 1.5, 0.7, 2.0);
        let model = arithmetic_model(b, sigma);
        let (mom, _) = run(&model, s, a2, 100_000, 8);
        let m = s * b / 3.0;
        let v = s * s * sigma * sigma / 9.0
            + s * s * b * b / 9.0
            + (a2 - 2.0 / 3.0 * s * s) * sigma * sigma / 6.0;
        assert!(mom.m.z_score(m).abs() < 3.0, "{:?} vs {m}", mom.m);
        assert!(mom.v.z_score(v).abs() < 3.0, "{:?} vs {v}", mom.v);
        let vc = s * s * sigma * sigma / 9.0 + (a2 - 2.0 / 3.0 * s * s) * sigma * sigma / 6.0;
        assert!((mom.v_c.mean - vc).abs() < 1e-9);
        assert!(mom.v.mean >= mom.m.mean * mom.m.mean);
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let m = ModelSpec::constant_black_scholes(100.0, 0.1, 0.2, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = PathSimulator::new(&m, grid, 1).unwrap().path(0);
        let pair = LimitPair { s: vec![3.0; 5], a2: vec![1.0; 5], provenance: Provenance::Given };
        assert!(matches!(path_functionals(&pair, &p, &m), Err(LimitError::InvalidPair { .. })));
        assert_eq!(limit_moments_mc(&[]), Err(LimitError::NoPaths));
    }

    #[test]
    fn sharpe_rule_is_increasing_towards_bound() {
        let bound = sharpe_bound_from_integral(0.25);
        let mut last = -1.0;
        for i in 0..=40 {
            let s = sharpe_rule_analytic(i as f64 * 0.25, 0.25);
            assert!(s >= last && s <= bound);
            last = s;
        }
        assert_eq!(sharpe_rule_analytic(0.0, 0.25), 0.0);
        assert!((sharpe_rule_analytic(40.0, 0.25) - bound).abs() < 1e-12);
    }

    #[test]
    fn sharpe_rule_analytic_matches_pair_formula() {
        // constant c = b/σ² (arithmetic dynamics): s = c q, a² = s² + c²
        let (b, sigma, lambda) = (0.3_f64, 0.6_f64, 1.2_f64);
        let c = b / (sigma * sigma);
        let q = lambda.exp() - (-lambda).exp();
        let (s, a2) = (c * q, c * c * q * q + c * c);
        let m = s * b / 3.0;
        let vc = s * s * sigma * sigma / 9.0 + (a2 - 2.0 / 3.0 * s * s) * sigma * sigma / 6.0;
        let rho_sq = (b / sigma).powi(2);
        assert!((m / vc.sqrt() - sharpe_rule_analytic(lambda, rho_sq)).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        let flat = ModelSpec::constant_black_scholes(1.0, 0.0, 0.2, 2.0).unwrap();
        assert_eq!(sharpe_bound(&flat, 2.0).unwrap(), 0.0);
        let m = ModelSpec::constant_black_scholes(1.0, 0.1, 0.2, 2.0).unwrap();
        let expected = 6f64.sqrt() / 3.0 * 0.5 * 2f64.sqrt();
        assert!((sharpe_bound(&m, 2.0).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn quadrature_matches_dense_riemann_sum() {
        let knots = vec![0.0, 0.3, 0.7, 1.0];
        let b = Curve::new(knots.clone(), vec![0.05, 0.2, -0.1, 0.12]).unwrap();
        let s = Curve::new(knots, vec![0.2, 0.35, 0.15, 0.3]).unwrap();
        let m = ModelSpec::black_scholes(1.0, b.clone(), s.clone()).unwrap();
        let q = sharpe_sq_integral(&m, 1.0).unwrap();
        let n = 4_000_000;
        let h = 1.0 / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (b.value_at(t) / s.value_at(t)).powi(2) * h
            })
            .sum();
        assert!(((q - oracle) / oracle).abs() < 1e-8, "{q} vs {oracle}");
    }

    #[test]
    fn mc_bound_agrees_with_quadrature_for_deterministic_sharpe() {
        let m = ModelSpec::constant_black_scholes(1.0, 0.1, 0.2, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let paths = crate::process_sim::simulate_paths(&m, grid, 1, 3).unwrap();
        let a = sharpe_bound_mc(&paths, &m).unwrap();
        assert!((a - sharpe_bound(&m, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn second_moment_increases_with_a2_at_fixed_skew() {
        let model = arithmetic_model(0.4, 1.0);
        let mut last = f64::NEG_INFINITY;
        for &a2 in &[0.25, 0.5, 1.0, 2.0] {
            let (mom, _) = run(&model, 0.5, a2, 2_000, 8);
            assert!(mom.v.mean > last);
            last = mom.v.mean;
        }
    }
}
