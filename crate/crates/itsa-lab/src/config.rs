//! Flat `key = value` experiment configuration.
//!
//! Every key has a type and a default; unknown keys, duplicate keys and
//! unparsable values are rejected with the offending line number. The
//! canonical form lists every key in sorted order, one per line.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    DuplicateKey { line: usize, key: String, first: usize },
    #[error("line {line}: bad value {value:?} for `{key}`: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Float,
    Int,
    Text,
    Choice(&'static [&'static str]),
    FloatList,
    IntList,
    ChoiceList(&'static [&'static str]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
    FloatList(Vec<f64>),
    IntList(Vec<u64>),
    TextList(Vec<String>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, v: &[T]) -> fmt::Result {
            let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            f.write_str(&parts.join(", "))
        }
        match self {
            Value::Float(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
            Value::FloatList(v) => list(f, v),
            Value::IntList(v) => list(f, v),
            Value::TextList(v) => list(f, v),
        }
    }
}

const DIGIT_METHODS: &[&str] = &["erm", "ib", "rib", "itsa"];
const STEREO_METHODS: &[&str] = &["baseline", "scp_only", "itsa"];
const TEXTURES: &[&str] = &["flat", "gradient", "checker", "noise"];

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key_spec(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { key, kind, default }
}

/// Every accepted key, sorted.
const KEYS: &[KeySpec] = &[
    key_spec("digit.batch_size", Kind::Int, "64"),
    key_spec("digit.data_dir", Kind::Text, ""),
    key_spec("digit.epochs", Kind::Int, "10"),
    key_spec("digit.lr", Kind::Float, "0.001"),
    key_spec("digit.method", Kind::Choice(DIGIT_METHODS), "erm"),
    key_spec("digit.seed", Kind::IntList, "0"),
    key_spec("digit.train_subset", Kind::Int, "0"),
    key_spec("digit.val_size", Kind::Int, "1000"),
    key_spec("eval.d1_threshold", Kind::Float, "3"),
    key_spec("eval.epsilon", Kind::Float, "0.5"),
    key_spec("fisher.epsilons", Kind::FloatList, "0.1, 0.03, 0.01"),
    key_spec("fisher.probes", Kind::Int, "10000"),
    key_spec("fisher.samples", Kind::Int, "100000"),
    key_spec("fisher.seed", Kind::IntList, "0"),
    key_spec("fisher.sigma", Kind::Float, "0.6"),
    key_spec("gradcheck.h", Kind::Float, "0.00001"),
    key_spec("gradcheck.instances", Kind::Int, "20"),
    key_spec("gradcheck.seed", Kind::IntList, "0"),
    key_spec("gradcheck.tol", Kind::Float, "0.0001"),
    key_spec("ib.beta", Kind::Float, "0.001"),
    key_spec("itsa.epsilon", Kind::Float, "0.5"),
    key_spec("itsa.lambda", Kind::Float, "0.1"),
    key_spec("rib.beta_fisher", Kind::Float, "0.0001"),
    key_spec("rib.sigma", Kind::Float, "0.1"),
    key_spec("run.id", Kind::Text, "run"),
    key_spec("scene.height", Kind::Int, "64"),
    key_spec("scene.max_disparity", Kind::Int, "32"),
    key_spec("scene.max_layers", Kind::Int, "6"),
    key_spec("scene.min_layers", Kind::Int, "3"),
    key_spec("scene.textures", Kind::ChoiceList(TEXTURES), "flat, gradient, checker, noise"),
    key_spec("scene.width", Kind::Int, "128"),
    key_spec("stereo.batch_size", Kind::Int, "4"),
    key_spec("stereo.epochs", Kind::Int, "10"),
    key_spec("stereo.lr", Kind::Float, "0.001"),
    key_spec("stereo.method", Kind::Choice(STEREO_METHODS), "baseline"),
    key_spec("stereo.seed", Kind::IntList, "0"),
    key_spec("stereo.test_size", Kind::Int, "100"),
    key_spec("stereo.train_size", Kind::Int, "2000"),
];

fn parse_value(kind: Kind, raw: &str) -> Result<Value, String> {
    let float = |s: &str| -> Result<f64, String> {
        let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{s:?} is not finite"))
        }
    };
    let int = |s: &str| s.parse::<u64>().map_err(|_| format!("{s:?} is not a non-negative integer"));
    let items = |s: &str| -> Result<Vec<String>, String> {
        let v: Vec<String> = s.split(',').map(|p| p.trim().to_string()).collect();
        if v.iter().any(|p| p.is_empty()) {
            Err("empty list item".into())
        } else {
            Ok(v)
        }
    };
    let choice = |allowed: &[&str], s: &str| -> Result<String, String> {
        // accept hyphenated spellings such as `scp-only`
        let s = s.replace('-', "_");
        if allowed.contains(&s.as_str()) {
            Ok(s)
        } else {
            Err(format!("expected one of {}", allowed.join(", ")))
        }
    };
    Ok(match kind {
        Kind::Float => Value::Float(float(raw)?),
        Kind::Int => Value::Int(int(raw)?),
        Kind::Text => {
            if raw.contains(['\n', '#']) {
                return Err("text may not contain `#` or newlines".into());
            }
            Value::Text(raw.to_string())
        }
        Kind::Choice(allowed) => Value::Text(choice(allowed, raw)?),
        Kind::FloatList => Value::FloatList(items(raw)?.iter().map(|s| float(s)).collect::<Result<_, _>>()?),
        Kind::IntList => Value::IntList(items(raw)?.iter().map(|s| int(s)).collect::<Result<_, _>>()?),
        Kind::ChoiceList(allowed) => Value::TextList(items(raw)?.iter().map(|s| choice(allowed, s)).collect::<Result<_, _>>()?),
    })
}

fn lookup(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Typed configuration with every key present.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<&'static str, Value>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|k| (k.key, parse_value(k.kind, k.default).expect("defaults parse")))
            .collect();
        Self { values }
    }
}

impl ExperimentConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.key)
    }

    /// Sets one key from its text form; `line` is reported in errors.
    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<(), ConfigError> {
        let entry = lookup(key).ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
        let value = parse_value(entry.kind, raw.trim()).map_err(|reason| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: raw.trim().to_string(),
            reason,
        })?;
        self.values.insert(entry.key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    pub fn float(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Float(v) => *v,
            other => panic!("{key} is not a float: {other:?}"),
        }
    }

    pub fn int(&self, key: &str) -> u64 {
        match self.get(key) {
            Value::Int(v) => *v,
            other => panic!("{key} is not an integer: {other:?}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn text(&self, key: &str) -> &str {
        match self.get(key) {
            Value::Text(v) => v,
            other => panic!("{key} is not text: {other:?}"),
        }
    }

    pub fn floats(&self, key: &str) -> &[f64] {
        match self.get(key) {
            Value::FloatList(v) => v,
            other => panic!("{key} is not a float list: {other:?}"),
        }
    }

    pub fn ints(&self, key: &str) -> &[u64] {
        match self.get(key) {
            Value::IntList(v) => v,
            other => panic!("{key} is not an integer list: {other:?}"),
        }
    }

    pub fn texts(&self, key: &str) -> &[String] {
        match self.get(key) {
            Value::TextList(v) => v,
            other => panic!("{key} is not a text list: {other:?}"),
        }
    }

    /// Sorted `key = value` lines for every key.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, text: raw.to_string() })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, text: raw.to_string() });
        }
        if lookup(key).is_none() {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        if let Some(&first) = seen.get(key) {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string(), first });
        }
        seen.insert(key.to_string(), line);
        cfg.set(key, value, line)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_unique() {
        assert!(KEYS.windows(2).all(|w| w[0].key < w[1].key));
    }

    #[test]
    fn list_values_round_trip_through_display() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("fisher.epsilons", "0.1,1e-3", 1).unwrap();
        assert_eq!(cfg.floats("fisher.epsilons"), &[0.1, 0.001]);
        assert_eq!(cfg.get("fisher.epsilons").to_string(), "0.1, 0.001");
    }

    #[test]
    fn hyphenated_method_is_normalised() {
        let cfg = parse_config("stereo.method = scp-only").unwrap();
        assert_eq!(cfg.text("stereo.method"), "scp_only");
    }
}
