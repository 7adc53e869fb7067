//! Run configuration: a TOML document with validated, defaulted fields.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::law::{DriftParams, LawError, OffspringLaw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("invalid law: {0}")]
    Law(#[from] LawError),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveA,
    Wave,
    Dist,
    Simulate,
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveA => "solve-a",
            Command::Wave => "wave",
            Command::Dist => "dist",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }
}

/// Acceptance thresholds a run is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Integral-identity residual.
    pub identity: f64,
    /// `sup |a_series - a_wave|`.
    pub cross_oracle: f64,
    /// `|F_x(series) - F_x(wave)|`.
    pub flow: f64,
    /// Largest acceptable censored fraction.
    pub censoring: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { identity: 1e-8, cross_oracle: 1e-6, flow: 1e-8, censoring: 1e-3 }
    }
}

impl Tolerances {
    /// Applies a `name=value` override.
    pub fn set(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (name, value) = spec.split_once('=').ok_or_else(|| invalid("tolerance", format!("expected name=value, got `{spec}`")))?;
        let value: f64 = value.trim().parse().map_err(|_| invalid("tolerance", format!("`{value}` is not a number")))?;
        if !(value >= 0.0) {
            return Err(invalid("tolerance", format!("{name} must be non-negative")));
        }
        let slot = match name.trim() {
            "identity" => &mut self.identity,
            "cross_oracle" => &mut self.cross_oracle,
            "flow" => &mut self.flow,
            "censoring" => &mut self.censoring,
            other => return Err(invalid("tolerance", format!("unknown tolerance `{other}`"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Killing interval `(a, b)` entered at `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub a: f64,
    pub b: f64,
    pub y: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    crate::sim::DEFAULT_DT
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BarrierSpec {
    x: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSpec {
    dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    command: Option<Command>,
    law: Option<toml::Table>,
    c: Option<f64>,
    #[serde(rename = "N", alias = "order")]
    order: Option<usize>,
    n_max: Option<usize>,
    radius: Option<f64>,
    samples: Option<usize>,
    replicas: Option<u64>,
    seed: Option<u64>,
    max_events: Option<u64>,
    max_population: Option<usize>,
    barrier: Option<BarrierSpec>,
    interval: Option<IntervalSpec>,
    output: Option<OutputSpec>,
    tolerances: Option<Tolerances>,
}

/// A validated run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub law: OffspringLaw,
    pub c: f64,
    /// Generator coefficients computed.
    #[serde(rename = "N")]
    pub order: usize,
    /// Largest index of the distribution of `Z_x`.
    pub n_max: usize,
    pub x: Option<f64>,
    pub interval: Option<IntervalSpec>,
    pub radius: Option<f64>,
    pub samples: Option<usize>,
    pub replicas: u64,
    pub seed: u64,
    pub max_events: u64,
    pub max_population: usize,
    pub out: PathBuf,
    pub tolerances: Tolerances,
}

pub const DEFAULT_ORDER: usize = 20_000;
pub const DEFAULT_REPLICAS: u64 = 100_000;
pub const DEFAULT_X: f64 = 0.5;

fn parse_law(table: &toml::Table) -> Result<OffspringLaw, ConfigError> {
    let number = |key: &str, v: &toml::Value| {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(|| invalid(&format!("law.{key}"), "expected a number"))
    };
    let mut pairs = Vec::new();
    for (key, value) in table {
        match key.as_str() {
            "preset" => match value.as_str() {
                Some("dyadic") => pairs.push((2, 1.0)),
                _ => return Err(invalid("law.preset", "only `dyadic` is known")),
            },
            "pairs" => {
                let list = value.as_array().ok_or_else(|| invalid("law.pairs", "expected [[k, p], ...]"))?;
                for item in list {
                    let kp = item.as_array().filter(|a| a.len() == 2).ok_or_else(|| invalid("law.pairs", "expected [k, p]"))?;
                    let k = kp[0].as_integer().filter(|k| *k >= 0).ok_or_else(|| invalid("law.pairs", "k must be a non-negative integer"))?;
                    pairs.push((k as usize, number("pairs", &kp[1])?));
                }
            }
            other => {
                let k = other
                    .strip_prefix('p')
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| invalid(&format!("law.{other}"), "unknown key"))?;
                pairs.push((k, number(other, value)?));
            }
        }
    }
    if pairs.is_empty() {
        return Err(invalid("law", "no offspring masses given"));
    }
    Ok(OffspringLaw::new(pairs)?)
}

fn line_of(text: &str, err: &toml::de::Error) -> usize {
    err.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0)
}

/// Parses and validates a configuration; `command` overrides the document's own.
pub fn parse_config(text: &str, command: Option<Command>) -> Result<RunConfig, ConfigError> {
    let raw: Raw = toml::from_str(text).map_err(|e| ConfigError::Parse { line: line_of(text, &e), message: e.message().to_string() })?;
    let command = match (command, raw.command) {
        (Some(a), Some(b)) if a != b => return Err(invalid("command", format!("document says `{}`, invocation says `{}`", b.name(), a.name()))),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(invalid("command", "missing")),
    };
    let law = match &raw.law {
        Some(t) => parse_law(t)?,
        None => OffspringLaw::dyadic(),
    };
    let c = raw.c.unwrap_or_else(|| law.c0());
    if !c.is_finite() {
        return Err(invalid("c", "must be finite"));
    }
    if raw.barrier.is_some() && raw.interval.is_some() {
        return Err(invalid("barrier", "single-barrier and interval sections are exclusive"));
    }
    let order = raw.order.unwrap_or(DEFAULT_ORDER);
    if order < 2 {
        return Err(invalid("N", "must be at least 2"));
    }
    let n_max = raw.n_max.unwrap_or(order);
    if n_max < 1 {
        return Err(invalid("n_max", "must be positive"));
    }
    if let Some(r) = raw.radius {
        if !(r > 0.0 && r < 1.0) {
            return Err(invalid("radius", "must lie in (0, 1)"));
        }
    }
    if let Some(m) = raw.samples {
        if !m.is_power_of_two() || m < 2 * (n_max + 1) {
            return Err(invalid("samples", "must be a power of two above 2(n_max + 1)"));
        }
    }
    let x = raw.barrier.as_ref().map(|b| b.x);
    if let Some(x) = x {
        if !(x > 0.0 && x.is_finite()) {
            return Err(invalid("barrier.x", "must be positive"));
        }
    }
    if let Some(iv) = raw.interval {
        if !(iv.a < iv.y && iv.y < iv.b) {
            return Err(invalid("interval", "need a < y < b"));
        }
        if !(iv.dt > 0.0) {
            return Err(invalid("interval.dt", "must be positive"));
        }
        if command != Command::Simulate {
            return Err(invalid("interval", "only `simulate` runs two-barrier mode"));
        }
    }
    let regime = DriftParams::new(&law, c).regime;
    let needs_extinction = !(command == Command::Simulate && raw.interval.is_some());
    if needs_extinction && !regime.extinct() {
        return Err(invalid("c", format!("drift {c} is below the critical drift {}", law.c0())));
    }
    let replicas = raw.replicas.unwrap_or(DEFAULT_REPLICAS);
    if replicas == 0 {
        return Err(invalid("replicas", "must be positive"));
    }
    let max_events = raw.max_events.unwrap_or(crate::sim::DEFAULT_MAX_EVENTS);
    let max_population = raw.max_population.unwrap_or(crate::sim::DEFAULT_MAX_POPULATION);
    if max_events == 0 || max_population == 0 {
        return Err(invalid("max_events", "caps must be positive"));
    }
    let x = match command {
        Command::Dist | Command::Verify | Command::Report => Some(x.unwrap_or(DEFAULT_X)),
        Command::Simulate if raw.interval.is_none() => Some(x.ok_or_else(|| invalid("barrier", "simulate needs [barrier] or [interval]"))?),
        _ => x,
    };
    Ok(RunConfig {
        command,
        law,
        c,
        order,
        n_max,
        x,
        interval: raw.interval,
        radius: raw.radius,
        samples: raw.samples,
        replicas,
        seed: raw.seed.unwrap_or(0),
        max_events,
        max_population,
        out: raw.output.map(|o| o.dir).unwrap_or_else(|| PathBuf::from("out")),
        tolerances: raw.tolerances.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_solve_a() {
        let cfg = parse_config("command = \"solve-a\"\n[law]\npreset = \"dyadic\"\n", None).unwrap();
        assert_eq!(cfg.command, Command::SolveA);
        assert_eq!(cfg.order, 20_000);
        assert_eq!(cfg.law, OffspringLaw::dyadic());
        assert!((cfg.c - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn law_forms() {
        let a = parse_config("command = \"dist\"\nc = 1.7\n[law]\npairs = [[0, 0.2], [3, 0.8]]\n", None).unwrap();
        let b = parse_config("command = \"dist\"\nc = 1.7\n[law]\np0 = 0.2\np3 = 0.8\n", None).unwrap();
        assert_eq!(a.law, b.law);
        assert_eq!(a.x, Some(0.5));
    }

    #[test]
    fn one_child_mass_rejected() {
        let err = parse_config("command = \"solve-a\"\nc = 2.0\n[law]\np0 = 0.1\np1 = 0.1\np2 = 0.8\n", None).unwrap_err();
        assert!(err.to_string().contains("offspring mass at 1"), "{err}");
    }

    #[test]
    fn exclusive_barriers() {
        let text = "command = \"simulate\"\nc = 1.5\n[barrier]\nx = 0.5\n[interval]\na = -1.0\nb = 1.0\ny = 0.0\n";
        assert!(matches!(parse_config(text, None), Err(ConfigError::Validation { field, .. }) if field == "barrier"));
    }

    #[test]
    fn unknown_keys_and_parse_lines() {
        assert!(matches!(parse_config("command = \"wave\"\nbogus = 1\n", None), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(parse_config("command = \"wave\"\n[law]\nq2 = 1.0\n", None), Err(ConfigError::Validation { .. })));
        assert!(matches!(parse_config("command = \"wave\"\nc = \n", None), Err(ConfigError::Parse { line: 2, .. })));
    }

    #[test]
    fn command_resolution() {
        assert!(parse_config("", Some(Command::Wave)).is_ok());
        assert!(parse_config("", None).is_err());
        assert!(parse_config("command = \"wave\"", Some(Command::Dist)).is_err());
        assert!(parse_config("c = 1.0", Some(Command::Wave)).is_err());
        assert!(parse_config("c = 1.0\n[interval]\na = -1.0\nb = 1.0\ny = 0.0\n", Some(Command::Simulate)).is_ok());
    }

    #[test]
    fn tolerance_overrides() {
        let mut t = Tolerances::default();
        t.set("identity=1e-9").unwrap();
        assert_eq!(t.identity, 1e-9);
        assert!(t.set("nope=1").is_err());
        assert!(t.set("identity").is_err());
        assert!(t.set("flow=-1").is_err());
    }
}
