//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key is optional and falls back to the benchmark defaults:
//!
//! ```text
//! model       = benchmark      # only built-in model
//! b0          = 1
//! c0          = 1
//! d0          = 1
//! x0          = 1
//! T           = 0.1
//! delta       = 1e-4
//! N_list      = 5,15,25,35,45,55,65,75,85,95
//! trials      = 20
//! seed        = 1
//! alpha       = 1
//! beta        = 10
//! renormalize = on             # on | off
//! out_prefix  = benchmark
//! workers     = 0              # 0: all cores
//! ```

use mpl::experiment::{ExperimentConfig, ExperimentError, ModelChoice};
use mpl::model::{BenchmarkParams, ModelError};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const KEYS: [&str; 15] = [
    "model", "b0", "c0", "d0", "x0", "T", "delta", "N_list", "trials", "seed", "alpha", "beta", "renormalize", "out_prefix",
    "workers",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` is set twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), reason: reason.into() }
    }
}

pub fn parse_switch(value: &str) -> Option<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("`{}`: {e}", s.trim())))
        .collect()
}

/// Parse config text; the result is validated.
pub fn parse_config(text: &str) -> Result<ExperimentConfig<f64>, ConfigError> {
    let cfg = parse_fields(text)?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Parse config text without checking cross-key invariants, so that
/// command-line overrides can still repair them.
pub fn parse_fields(text: &str) -> Result<ExperimentConfig<f64>, ConfigError> {
    let mut cfg = ExperimentConfig::<f64>::default();
    let ModelChoice::Benchmark(mut params) = cfg.model;
    let mut seen = HashSet::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, reason: format!("expected `key = value`, found `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if !seen.insert(key) {
            return Err(ConfigError::Duplicate { line, key: key.into() });
        }
        let syntax = |reason: String| ConfigError::Syntax { line, reason: format!("`{key}`: {reason}") };
        let float = || value.parse::<f64>().map_err(|e| syntax(format!("`{value}` is not a number ({e})")));
        let int = || value.parse::<usize>().map_err(|e| syntax(format!("`{value}` is not a nonnegative integer ({e})")));
        match key {
            "model" if value == "benchmark" => {}
            "model" => return Err(syntax(format!("unknown model `{value}` (available: benchmark)"))),
            "b0" => params.b0 = float()?,
            "c0" => params.c0 = float()?,
            "d0" => params.d0 = float()?,
            "x0" => params.x0 = float()?,
            "T" => cfg.horizon = float()?,
            "delta" => cfg.delta = float()?,
            "N_list" => cfg.n_list = parse_list(value).map_err(syntax)?,
            "trials" => cfg.trials = int()?,
            "seed" => cfg.master_seed = value.parse().map_err(|e| syntax(format!("`{value}` is not a u64 ({e})")))?,
            "alpha" => cfg.alpha = float()?,
            "beta" => cfg.beta = float()?,
            "renormalize" => cfg.renormalize = parse_switch(value).ok_or_else(|| syntax(format!("`{value}` is not on/off")))?,
            "out_prefix" if value.is_empty() => return Err(syntax("must not be empty".into())),
            "out_prefix" => cfg.out_prefix = value.into(),
            "workers" => cfg.workers = int()?,
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    cfg.model = ModelChoice::Benchmark(params);
    Ok(cfg)
}

/// Check every invariant, naming the offending key.
pub fn validate(cfg: &ExperimentConfig<f64>) -> Result<(), ConfigError> {
    if cfg.delta.partial_cmp(&cfg.horizon) != Some(std::cmp::Ordering::Less) {
        return Err(ConfigError::invalid("delta", format!("must be smaller than T = {}, got {}", cfg.horizon, cfg.delta)));
    }
    cfg.validate().map_err(|e| match e {
        ExperimentError::InvalidConfig { field, reason } => ConfigError::invalid(field, reason),
        ExperimentError::Model(ModelError::InvalidParameter { name, reason }) => ConfigError::invalid(name, reason),
        other => ConfigError::invalid("model", other.to_string()),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig<f64>, ConfigError> {
    let cfg = load_fields(path)?;
    validate(&cfg)?;
    Ok(cfg)
}

/// [`load_config`] without the invariant checks.
pub fn load_fields(path: &Path) -> Result<ExperimentConfig<f64>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    parse_fields(&text)
}

/// Render a config in the file format; `parse_config` reads it back unchanged.
pub fn to_config_text(cfg: &ExperimentConfig<f64>) -> String {
    let ModelChoice::Benchmark(BenchmarkParams { b0, c0, d0, x0 }) = cfg.model;
    let list: Vec<String> = cfg.n_list.iter().map(usize::to_string).collect();
    let mut out = String::new();
    let _ = writeln!(out, "model = benchmark");
    for (k, v) in [("b0", b0), ("c0", c0), ("d0", d0), ("x0", x0), ("T", cfg.horizon), ("delta", cfg.delta)] {
        let _ = writeln!(out, "{k} = {v:?}");
    }
    let _ = writeln!(out, "N_list = {}", list.join(","));
    let _ = writeln!(out, "trials = {}", cfg.trials);
    let _ = writeln!(out, "seed = {}", cfg.master_seed);
    let _ = writeln!(out, "alpha = {:?}", cfg.alpha);
    let _ = writeln!(out, "beta = {:?}", cfg.beta);
    let _ = writeln!(out, "renormalize = {}", if cfg.renormalize { "on" } else { "off" });
    let _ = writeln!(out, "out_prefix = {}", cfg.out_prefix);
    let _ = writeln!(out, "workers = {}", cfg.workers);
    out
}
