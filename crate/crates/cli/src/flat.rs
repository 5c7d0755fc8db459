//! Flat `key = value` configuration files.
//!
//! The schema is the serialized default config of each study, flattened to
//! dotted keys (`model.kind`, `schedule.n`, ...). The same schema checks
//! keys, types the values, prints `--help` and renders `config.resolved`,
//! so the accepted keys and the documented keys cannot drift apart.

use std::fmt;

use profilik_core::experiments::{ExperimentConfig, ExperimentKind};
use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum FlatError {
    UnknownKey(String),
    BadLine { line: usize, text: String },
    BadValue { key: String, value: String, expected: String },
    Invalid(String),
}

impl fmt::Display for FlatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlatError::UnknownKey(k) => write!(f, "unknown config key `{k}`"),
            FlatError::BadLine { line, text } => write!(f, "line {line}: expected `key = value`, got `{text}`"),
            FlatError::BadValue { key, value, expected } => {
                write!(f, "key `{key}`: cannot read `{value}` as {expected}")
            }
            FlatError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for FlatError {}

/// Dotted keys with their default JSON values, in declaration order.
pub fn schema(kind: ExperimentKind) -> Vec<(String, Value)> {
    let v = serde_json::to_value(ExperimentConfig::defaults(kind)).expect("config serializes");
    let mut out = Vec::new();
    flatten("", &v, &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "auto".into(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(render).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// One `key = value` line per schema entry.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let v = serde_json::to_value(cfg).expect("config serializes");
    let mut flat = Vec::new();
    flatten("", &v, &mut flat);
    flat.iter().map(|(k, v)| format!("{k} = {}\n", render(v))).collect()
}

/// Help text: every key with its default.
pub fn render_schema(kind: ExperimentKind) -> String {
    render_config(&ExperimentConfig::defaults(kind))
}

fn expected(template: &Value) -> &'static str {
    match template {
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_u64() => "a nonnegative integer",
        Value::Number(_) => "a number",
        Value::String(_) => "a name",
        Value::Array(_) => "a comma-separated list",
        Value::Null => "a number or `auto`",
        Value::Object(_) => "a section",
    }
}

fn parse_scalar(template: &Value, s: &str) -> Option<Value> {
    match template {
        Value::Bool(_) => s.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => {
            if let Ok(u) = s.parse::<u64>() {
                return Some(Value::Number(u.into()));
            }
            // Accept integral scientific notation such as 1e5.
            let f: f64 = s.parse().ok()?;
            (f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(53)).then(|| Value::Number((f as u64).into()))
        }
        Value::Number(_) => s.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number),
        Value::String(_) => (!s.is_empty()).then(|| Value::String(s.to_string())),
        Value::Null => {
            if s == "auto" {
                Some(Value::Null)
            } else {
                s.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number)
            }
        }
        _ => None,
    }
}

fn parse_value(key: &str, template: &Value, s: &str) -> Result<Value, FlatError> {
    let bad = || FlatError::BadValue {
        key: key.to_string(),
        value: s.to_string(),
        expected: expected(template).to_string(),
    };
    match template {
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::Number(0.into()));
            if s.trim().is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            s.split(',')
                .map(|part| parse_scalar(&elem, part.trim()).ok_or_else(bad))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        t => parse_scalar(t, s).ok_or_else(bad),
    }
}

/// `key = value` pairs from a config file; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, FlatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| FlatError::BadLine {
            line: i + 1,
            text: raw.trim().to_string(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), FlatError> {
    let (k, v) = s.split_once('=').ok_or_else(|| FlatError::BadLine {
        line: 0,
        text: s.to_string(),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn insert(root: &mut Map<String, Value>, key: &str, v: Value) {
    match key.split_once('.') {
        None => {
            root.insert(key.to_string(), v);
        }
        Some((head, rest)) => {
            let child = root
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(m) = child {
                insert(m, rest, v);
            }
        }
    }
}

/// Defaults of `kind` with `pairs` applied in order; later pairs win.
pub fn resolve(kind: ExperimentKind, pairs: &[(String, String)]) -> Result<ExperimentConfig, FlatError> {
    let defaults = schema(kind);
    let mut flat = defaults.clone();
    for (k, v) in pairs {
        let i = defaults
            .iter()
            .position(|(key, _)| key == k)
            .ok_or_else(|| FlatError::UnknownKey(k.clone()))?;
        // Values are typed by the default, so an `auto` slot keeps
        // accepting both numbers and `auto`.
        flat[i].1 = parse_value(k, &defaults[i].1, v)?;
    }
    let mut root = Map::new();
    for (k, v) in flat {
        insert(&mut root, &k, v);
    }
    serde_json::from_value(Value::Object(root)).map_err(|e| FlatError::Invalid(e.to_string()))
}
