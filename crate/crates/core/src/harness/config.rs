//! Experiment configuration files.
//!
//! A configuration is a JSON document with one block per concern:
//!
//! ```json
//! {
//!   "model": { "y0": 100, "drift": 0.1, "vol": 0.2, "horizon": 1 },
//!   "delta": { "strike": 100, "vol": 0.2 },
//!   "rule": { "kind": "hitting", "lower": 1, "upper": 1,
//!             "eps_schedule": [0.4, 0.2, 0.1, 0.05], "oversample": 128 },
//!   "mc": { "n_paths": 1000, "seed": 7 }
//! }
//! ```
//!
//! Curves are either a number or `{ "knots": [...], "values": [...] }`.
//! Errors carry the line and column of the offending entry.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::delta_hedge::{DeltaSpec, Payoff};
use crate::lq_riccati::Controller;
use crate::process_sim::{Curve, ModelSpec};
use crate::rules::{Barriers, Monitoring, Rule, RuleKind};

pub const DEFAULT_EPS_SCHEDULE: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
/// Smallest path count accepted for moment estimates.
pub const MIN_MOMENT_PATHS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveConfig {
    Constant(f64),
    Table { knots: Vec<f64>, values: Vec<f64> },
}

impl CurveConfig {
    fn to_curve(&self, horizon: f64) -> Result<Curve, String> {
        match self {
            CurveConfig::Constant(v) => Ok(Curve::constant(*v, horizon)),
            CurveConfig::Table { knots, values } => {
                Curve::new(knots.clone(), values.clone()).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    BlackScholes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    pub y0: f64,
    pub drift: CurveConfig,
    pub vol: CurveConfig,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaConfig {
    pub strike: f64,
    pub vol: f64,
    /// Defaults to the model horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
    #[serde(default)]
    pub payoff: Payoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKindConfig {
    Equidistant,
    Hitting,
    Sharpe,
    OptimalEe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub kind: RuleKindConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Second-moment allowance of the expectation-optimal rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Target mean of the expectation-optimal rule; sets the multiplier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<f64>,
    #[serde(default = "default_schedule")]
    pub eps_schedule: Vec<f64>,
    #[serde(default = "default_oversample")]
    pub oversample: f64,
    #[serde(default)]
    pub t_min: f64,
    #[serde(default)]
    pub monitoring: Monitoring,
}

fn default_schedule() -> Vec<f64> {
    DEFAULT_EPS_SCHEDULE.to_vec()
}

fn default_oversample() -> f64 {
    128.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Grid steps for the path functionals.
    #[serde(default = "default_sweep_steps")]
    pub steps: usize,
}

fn default_sweep_steps() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierConfig {
    pub targets: Vec<f64>,
    pub delta: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiConfig {
    #[serde(default = "default_mus")]
    pub mus: Vec<f64>,
    #[serde(default = "default_riccati_steps")]
    pub steps: usize,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self { mus: default_mus(), steps: default_riccati_steps() }
    }
}

fn default_mus() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_riccati_steps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleConfig>,
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier: Option<FrontierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riccati: Option<RiccatiConfig>,
}

/// Parsed configuration together with its source text, for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    source: String,
}

impl LoadedConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(source).map_err(|e| ConfigError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let loaded = Self { config, source: source.to_string() };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: 0,
            column: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&source)
    }

    pub fn from_config(config: ExperimentConfig) -> Result<Self, ConfigError> {
        let source = serde_json::to_string_pretty(&config).expect("config serializes");
        let loaded = Self { config, source };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Error located at the entry reached through `keys`.
    pub fn error_at(&self, keys: &[&str], message: impl Into<String>) -> ConfigError {
        let (line, column) = locate(&self.source, keys);
        ConfigError { line, column, message: message.into() }
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.config).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.mc.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        self.model()?;
        if c.mc.n_paths == 0 {
            return Err(self.error_at(&["mc", "n_paths"], "n_paths must be at least 1"));
        }
        if c.delta.is_some() {
            self.delta_spec()?;
        }
        if let Some(rule) = &c.rule {
            let s = &rule.eps_schedule;
            if s.is_empty() {
                return Err(self.error_at(&["rule", "eps_schedule"], "eps_schedule is empty"));
            }
            if let Some(e) = s.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                return Err(self.error_at(
                    &["rule", "eps_schedule"],
                    format!("eps_schedule entries must be positive, got {e}"),
                ));
            }
            if s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(
                    self.error_at(&["rule", "eps_schedule"], "eps_schedule must be strictly decreasing")
                );
            }
            if !(rule.oversample.is_finite() && rule.oversample >= 1.0) {
                return Err(self.error_at(&["rule", "oversample"], "oversample must be >= 1"));
            }
            if rule.kind == RuleKindConfig::OptimalEe {
                let target = rule
                    .target_mean
                    .ok_or_else(|| self.error_at(&["rule"], "optimal_ee rule needs target_mean"))?;
                if !(target > 0.0) {
                    return Err(self.error_at(&["rule", "target_mean"], "target_mean must be positive"));
                }
            }
            if rule.kind == RuleKindConfig::OptimalEe {
                let delta =
                    rule.delta.ok_or_else(|| self.error_at(&["rule"], "optimal_ee rule needs delta"))?;
                if !(delta.is_finite() && delta > 0.0) {
                    return Err(
                        self.error_at(&["rule", "delta"], format!("delta must be positive, got {delta}"))
                    );
                }
            } else {
                self.rule_at(s[0], None)?;
            }
        }
        if let Some(sweep) = &c.sweep {
            if sweep.lambdas.is_empty() {
                return Err(self.error_at(&["sweep", "lambdas"], "lambdas is empty"));
            }
            if let Some(l) = sweep.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
                return Err(
                    self.error_at(&["sweep", "lambdas"], format!("lambdas must be non-negative, got {l}"))
                );
            }
            if sweep.steps < 2 {
                return Err(self.error_at(&["sweep", "steps"], "steps must be at least 2"));
            }
        }
        if let Some(fr) = &c.frontier {
            if fr.targets.is_empty() || fr.targets.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(self.error_at(
                    &["frontier", "targets"],
                    "targets must be a non-empty list of positive means",
                ));
            }
            if !(fr.delta.is_finite() && fr.delta > 0.0) {
                return Err(self.error_at(&["frontier", "delta"], "delta must be positive"));
            }
            if !(fr.eps.is_finite() && fr.eps > 0.0) {
                return Err(self.error_at(&["frontier", "eps"], "eps must be positive"));
            }
        }
        if let Some(r) = &c.riccati {
            if r.mus.is_empty() || r.mus.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(self.error_at(&["riccati", "mus"], "mus must be positive"));
            }
            if r.steps < 2 {
                return Err(self.error_at(&["riccati", "steps"], "steps must be at least 2"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.config.model;
        if !(m.horizon.is_finite() && m.horizon > 0.0) {
            return Err(self.error_at(&["model", "horizon"], "horizon must be positive"));
        }
        let drift = m.drift.to_curve(m.horizon).map_err(|e| self.error_at(&["model", "drift"], e))?;
        let vol = m.vol.to_curve(m.horizon).map_err(|e| self.error_at(&["model", "vol"], e))?;
        if vol.min_value() <= 0.0 {
            return Err(self.error_at(&["model", "vol"], "volatility must be positive"));
        }
        ModelSpec::black_scholes(m.y0, drift, vol).map_err(|e| self.error_at(&["model", "y0"], e.to_string()))
    }

    pub fn horizon(&self) -> f64 {
        self.config.model.horizon
    }

    pub fn delta_spec(&self) -> Result<DeltaSpec, ConfigError> {
        let d = self.config.delta.as_ref().ok_or_else(|| self.error_at(&[], "missing delta block"))?;
        let spec = DeltaSpec {
            strike: d.strike,
            vol: d.vol,
            maturity: d.maturity.unwrap_or(self.config.model.horizon),
            payoff: d.payoff,
        };
        spec.validate().map_err(|e| self.error_at(&["delta"], e.to_string()))?;
        if spec.maturity < self.config.model.horizon {
            return Err(self.error_at(&["delta", "maturity"], "maturity must not precede the horizon"));
        }
        Ok(spec)
    }

    pub fn rule_config(&self) -> Result<&RuleConfig, ConfigError> {
        self.config.rule.as_ref().ok_or_else(|| self.error_at(&[], "missing rule block"))
    }

    /// Rule at scale `eps`. The expectation-optimal kind needs `controller`.
    pub fn rule_at(&self, eps: f64, controller: Option<Arc<Controller>>) -> Result<Rule, ConfigError> {
        let rc = self.rule_config()?;
        let horizon = self.config.model.horizon;
        let wrap = |keys: &[&str], e: String| self.error_at(keys, e);
        let rule = match rc.kind {
            RuleKindConfig::Equidistant => Rule::equidistant(eps),
            RuleKindConfig::Hitting => {
                let lower =
                    rc.lower.as_ref().ok_or_else(|| wrap(&["rule"], "hitting rule needs lower".into()))?;
                let upper =
                    rc.upper.as_ref().ok_or_else(|| wrap(&["rule"], "hitting rule needs upper".into()))?;
                match (lower, upper) {
                    (CurveConfig::Constant(l), CurveConfig::Constant(u)) => {
                        Rule::constant_barriers(eps, *l, *u)
                    }
                    _ => {
                        let l = lower.to_curve(horizon).map_err(|e| wrap(&["rule", "lower"], e))?;
                        let u = upper.to_curve(horizon).map_err(|e| wrap(&["rule", "upper"], e))?;
                        Rule::new(RuleKind::Hitting {
                            eps,
                            barriers: Barriers::Curves { lower: l, upper: u },
                        })
                    }
                }
            }
            RuleKindConfig::Sharpe => {
                let lambda = rc.lambda.ok_or_else(|| wrap(&["rule"], "sharpe rule needs lambda".into()))?;
                Rule::sharpe(eps, lambda)
            }
            RuleKindConfig::OptimalEe => {
                let delta = rc.delta.ok_or_else(|| wrap(&["rule"], "optimal_ee rule needs delta".into()))?;
                let controller =
                    controller.ok_or_else(|| wrap(&["rule"], "optimal_ee rule needs a controller".into()))?;
                Rule::optimal_ee(eps, delta, controller)
            }
        }
        .map_err(|e| wrap(&["rule"], e.to_string()))?;
        let rule = rule.with_t_min(rc.t_min).map_err(|e| wrap(&["rule", "t_min"], e.to_string()))?;
        Ok(rule.with_monitoring(rc.monitoring))
    }
}

/// Line and column (1-based) of the entry reached by following `keys`
/// through the source text; falls back to the deepest key found.
fn locate(source: &str, keys: &[&str]) -> (usize, usize) {
    let mut offset = 0;
    for key in keys {
        let needle = format!("\"{key}\"");
        match source[offset..].find(&needle) {
            Some(pos) => offset += pos,
            None => break,
        }
    }
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "model": { "y0": 100, "drift": 0.1, "vol": 0.2, "horizon": 1 },
  "delta": { "strike": 100, "vol": 0.2 },
  "rule": {
    "kind": "hitting",
    "lower": 1,
    "upper": 1,
    "eps_schedule": [0.4, 0.2]
  },
  "mc": { "n_paths": 200, "seed": 3 }
}"#;

    #[test]
    fn parses_and_defaults() {
        let c = LoadedConfig::parse(BASE).unwrap();
        let rule = c.rule_config().unwrap();
        assert_eq!(rule.oversample, 128.0);
        assert_eq!(rule.monitoring, Monitoring::Grid);
        assert_eq!(c.delta_spec().unwrap().maturity, 1.0);
        assert_eq!(c.config.output.format, OutputFormat::Csv);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn syntax_errors_point_at_the_line() {
        let broken = BASE.replace("\"upper\": 1,", "\"upper\": 1,,");
        let err = LoadedConfig::parse(&broken).unwrap_err();
        assert_eq!(err.line, 7);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = LoadedConfig::parse(&BASE.replace("\"seed\"", "\"sede\"")).unwrap_err();
        assert_eq!(err.line, 10);
        assert!(err.message.contains("sede"));
    }

    #[test]
    fn schedule_must_decrease() {
        let err = LoadedConfig::parse(&BASE.replace("[0.4, 0.2]", "[0.2, 0.4]")).unwrap_err();
        assert_eq!((err.line, err.column), (8, 5));
        assert!(err.message.contains("decreasing"));
    }

    #[test]
    fn semantic_errors_are_located() {
        let err =
            LoadedConfig::parse(&BASE.replace("\"vol\": 0.2, \"horizon\"", "\"vol\": -0.2, \"horizon\""))
                .unwrap_err();
        assert_eq!(err.line, 2);
        let err = LoadedConfig::parse(&BASE.replace("\"lower\": 1", "\"lower\": 0")).unwrap_err();
        assert_eq!(err.line, 4);
    }

    #[test]
    fn hash_tracks_seed() {
        let c = LoadedConfig::parse(BASE).unwrap();
        let h = c.hash();
        assert_eq!(h, LoadedConfig::parse(BASE).unwrap().hash());
        assert_ne!(h, c.with_seed(4).hash());
    }

    #[test]
    fn tabulated_curves() {
        let text = BASE.replace("\"drift\": 0.1", "\"drift\": { \"knots\": [0, 1], \"values\": [0.1, 0.2] }");
        let m = LoadedConfig::parse(&text).unwrap().model().unwrap();
        assert!((m.abs_drift(0.5, 100.0) - 15.0).abs() < 1e-12);
    }
}
