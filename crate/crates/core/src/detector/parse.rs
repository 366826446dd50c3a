use super::prompt::output_keys;
use crate::domain::{Distribution, DomainSet, SUM_TOLERANCE};
use serde_json::{Map, Value};
use thiserror::Error;

/// Accepted deviation of the classifier's probabilities from summing to 1.
pub const CLASSIFIER_SUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no JSON object found in classifier output")]
    NoJsonFound,
    #[error("classifier output is missing key {0:?}")]
    MissingKey(String),
    #[error("classifier output has unexpected key {0:?}")]
    UnexpectedKey(String),
    #[error("value for {key:?} is not numeric: {raw}")]
    NonNumericValue { key: String, raw: String },
    #[error("value for {key:?} is negative: {value}")]
    NegativeValue { key: String, value: f64 },
    #[error("probabilities sum to {0}, outside tolerance")]
    SumOutOfTolerance(f64),
}

/// Returns the byte range of the balanced `{...}` starting at `start`.
fn balanced_object(text: &str, start: usize) -> Option<&str> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// First parseable JSON object in `raw`, ignoring fences and prose.
fn first_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(start, _)| {
        let candidate = balanced_object(raw, start)?;
        match serde_json::from_str::<Value>(candidate) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        }
    })
}

fn numeric(key: &str, value: &Value) -> Result<f64, ParseError> {
    let non_numeric = || ParseError::NonNumericValue {
        key: key.to_string(),
        raw: value.to_string(),
    };
    let x = match value {
        Value::Number(n) => n.as_f64().ok_or_else(non_numeric)?,
        Value::String(s) => s.trim().parse::<f64>().map_err(|_| non_numeric())?,
        _ => return Err(non_numeric()),
    };
    if !x.is_finite() {
        return Err(non_numeric());
    }
    if x < 0.0 {
        return Err(ParseError::NegativeValue {
            key: key.to_string(),
            value: x,
        });
    }
    Ok(x)
}

/// Looks `key` up exactly, then case-insensitively.
fn lookup<'a>(map: &'a Map<String, Value>, key: &str) -> Option<(&'a String, &'a Value)> {
    map.get_key_value(key)
        .or_else(|| map.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)))
}

/// Extracts a domain distribution from a classifier reply.
pub fn parse_classifier_output(raw: &str, domains: &DomainSet) -> Result<Distribution, ParseError> {
    let map = first_object(raw).ok_or(ParseError::NoJsonFound)?;
    let keys = output_keys(domains);
    let mut used = Vec::with_capacity(keys.len());
    let mut values = Vec::with_capacity(keys.len());
    for (key, name) in keys.iter().zip(domains.names()) {
        let (found, value) = lookup(&map, key)
            .or_else(|| lookup(&map, name))
            .ok_or_else(|| ParseError::MissingKey(key.clone()))?;
        used.push(found.as_str());
        values.push(numeric(key, value)?);
    }
    if let Some(extra) = map.keys().find(|k| !used.contains(&k.as_str())) {
        return Err(ParseError::UnexpectedKey(extra.clone()));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > CLASSIFIER_SUM_TOLERANCE {
        return Err(ParseError::SumOutOfTolerance(sum));
    }
    let dist = if (sum - 1.0).abs() <= SUM_TOLERANCE {
        Distribution::new(values)
    } else {
        Distribution::normalize(&values)
    };
    dist.map_err(|_| ParseError::SumOutOfTolerance(sum))
}

/// Renders a distribution in the classifier's reply format (quoted values in
/// a fenced JSON block).
pub fn format_classifier_output(dist: &Distribution, domains: &DomainSet) -> String {
    let map: Map<String, Value> = output_keys(domains)
        .into_iter()
        .zip(dist.weights())
        .map(|(k, w)| (k, Value::String(w.to_string())))
        .collect();
    format!(
        "```json\n{}\n```",
        serde_json::to_string_pretty(&Value::Object(map)).expect("plain map serializes")
    )
}
