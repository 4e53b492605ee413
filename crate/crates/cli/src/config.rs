//! Flat key-value run configuration, `--set` overrides and list arguments.

use std::fs;
use std::path::{Path, PathBuf};

use mfg_core::grid::GridError;
use mfg_core::models::ModelError;
use mfg_core::{build_scenario, Algorithm, ScenarioOverrides, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SCENARIO: &str = "example1";
pub const DEFAULT_ALGORITHM: &str = "pi1";
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_SWEEP_MAX_ITERS: usize = 200;
pub const DEFAULT_OUTPUT_DIR: &str = "mfg_out";

/// Every key a config file may contain. Absent keys take the scenario's
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(rename = "I", default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Control bound; `inf` (or the string "inf") leaves the control free.
    #[serde(
        rename = "R",
        default,
        skip_serializing_if = "Option::is_none",
        with = "bound"
    )]
    pub control_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

mod bound {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() && *x > 0.0 => "inf".serialize(s),
            Some(x) => x.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Int(x) => Ok(Some(x as f64)),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "none" => Ok(Some(f64::INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

/// A configuration with every key filled in, plus the solver settings it
/// stands for.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub echo: RunConfig,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills defaults from the scenario preset and validates every key.
    /// `default_max_iters` differs between single runs and sweeps.
    pub fn resolve(&self, default_max_iters: usize) -> Result<Resolved, CliError> {
        let scenario = self.scenario.as_deref().unwrap_or(DEFAULT_SCENARIO);
        let algorithm: Algorithm = self
            .algorithm
            .as_deref()
            .unwrap_or(DEFAULT_ALGORITHM)
            .parse()
            .map_err(|e| CliError::key("algorithm", e))?;
        if self.nodes == Some(0) {
            return Err(CliError::key("I", "must be at least 3"));
        }
        if self.steps == Some(0) {
            return Err(CliError::key("N", "must be at least 1"));
        }
        let overrides = ScenarioOverrides {
            beta: self.beta,
            zeta: self.zeta,
            horizon: self.horizon,
            nodes: self.nodes,
            steps: self.steps,
            epsilon: self.epsilon,
        };
        let preset = build_scenario(scenario, &overrides).map_err(model_error)?;

        let tol = self.tol.unwrap_or(DEFAULT_TOL);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::key("tol", format!("must be positive, got {tol}")));
        }
        let max_iters = self.max_iters.unwrap_or(default_max_iters);
        if max_iters == 0 {
            return Err(CliError::key("max_iters", "must be at least 1"));
        }
        let bound = self.control_bound.unwrap_or(f64::INFINITY);
        if !(bound > 0.0) {
            return Err(CliError::key("R", format!("must be positive, got {bound}")));
        }
        let output_dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.to_string());
        if output_dir.is_empty() {
            return Err(CliError::key("output_dir", "must not be empty"));
        }

        let mut solver = SolverConfig::new(preset.clone(), algorithm);
        solver.tol_density = tol;
        solver.max_outer_iters = max_iters;
        solver.control_bound = bound;
        solver.validate()?;

        let echo = RunConfig {
            scenario: Some(preset.name.to_string()),
            algorithm: Some(algorithm.to_string()),
            beta: Some(self.beta.unwrap_or_else(|| preset.model.beta())),
            zeta: Some(preset.model.coupling_zeta),
            horizon: Some(preset.horizon),
            nodes: Some(preset.nodes),
            steps: Some(preset.steps),
            epsilon: Some(preset.epsilon),
            control_bound: Some(bound),
            tol: Some(tol),
            max_iters: Some(max_iters),
            output_dir: Some(output_dir.clone()),
        };
        Ok(Resolved {
            echo,
            solver,
            output_dir: PathBuf::from(output_dir),
        })
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Override { name, value } => {
            CliError::key(name, format!("invalid value {value}"))
        }
        ModelError::UnknownScenario(s) => CliError::key(
            "scenario",
            format!("unknown scenario '{s}' (expected example1, example2 or example3)"),
        ),
        ModelError::Grid(g) => grid_error(g),
        other => CliError::Config(other.to_string()),
    }
}

fn grid_error(e: GridError) -> CliError {
    match e {
        GridError::TooFewNodes(_) => CliError::key("I", e.to_string()),
        GridError::NoSteps => CliError::key("N", e.to_string()),
        GridError::Horizon(_) => CliError::key("T", e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

/// Reads a config file as a raw table. A `.json` file is taken to be a run
/// manifest and its `config` object is used.
pub fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    if is_json {
        table_from_manifest(&text)
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
    }
}

pub fn table_from_manifest(text: &str) -> Result<toml::Table, CliError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let config = match value.get_mut("config") {
        Some(c) => c.take(),
        None => value,
    };
    serde_json::from_value(config).map_err(|e| CliError::Config(e.to_string()))
}

/// Parses `key=value`. The value is read as a TOML scalar when possible
/// and as a bare string otherwise.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{arg}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!(
            "override '{arg}' has an empty key"
        )));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .filter(|t| t.len() == 1)
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Merges the optional config file and overrides into a validated config.
pub fn assemble(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => load_table(p)?,
        None => toml::Table::new(),
    };
    for arg in overrides {
        let (key, value) = parse_override(arg)?;
        table.insert(key.clone(), value);
        // Type errors are reported against the key that was just set.
        RunConfig::from_table(table.clone()).map_err(|e| match e {
            CliError::Config(msg) if !msg.contains("unknown field") => CliError::key(&key, msg),
            other => other,
        })?;
    }
    RunConfig::from_table(table)
}

/// Comma-separated list of finite numbers.
pub fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("'{s}' is not a finite number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("empty list".into()));
    }
    Ok(values)
}
