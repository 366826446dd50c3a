//! Knowledge-distribution detection.
//!
//! Texts generated by the base model are classified by an external annotation
//! model into per-domain probabilities. Each iteration's annotations are
//! averaged into one distribution, and the iterations are averaged into the
//! final estimate together with their per-domain spread.

mod client;
mod parse;
mod prompt;
pub mod synthetic;

pub use client::{
    annotate, AnnotationRun, Classifier, ClassifierEndpointConfig, ClassifyError, DroppedSample,
    HttpClassifier, RetryPolicy, MAX_DROP_FRACTION,
};
pub use parse::{
    format_classifier_output, parse_classifier_output, ParseError, CLASSIFIER_SUM_TOLERANCE,
};
pub use prompt::{build_prompt, is_six_domain_layout, output_keys, SIX_DOMAIN_KEYS};

use crate::domain::{DistError, Distribution, DomainSet};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("classifier endpoint unreachable: all {attempted} samples failed (last error: {last_error})")]
    EndpointUnreachable {
        attempted: usize,
        last_error: String,
    },
    #[error("{dropped} of {attempted} samples dropped, above the {pct}% limit", pct = MAX_DROP_FRACTION * 100.0)]
    TooManyDropped { dropped: usize, attempted: usize },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("sample {0:?} has empty text")]
    EmptyText(String),
    #[error("{path}:{line}: {message}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dist(#[from] DistError),
}

impl DetectError {
    /// True for failures caused by the annotation service rather than input data.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            DetectError::EndpointUnreachable { .. } | DetectError::TooManyDropped { .. }
        )
    }
}

/// One text generated by the base model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct SampleRecord {
    pub id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    text: String,
}

impl TryFrom<RawSample> for SampleRecord {
    type Error = DetectError;

    fn try_from(raw: RawSample) -> Result<Self, Self::Error> {
        Self::new(raw.id, raw.text)
    }
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DetectError> {
        let (id, text) = (id.into(), text.into());
        if text.trim().is_empty() {
            return Err(DetectError::EmptyText(id));
        }
        Ok(Self { id, text })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityAnnotation {
    pub sample_id: String,
    pub probs: Distribution,
}

impl ProbabilityAnnotation {
    /// `{"id": .., "probs": {"law": .., ..}}`.
    pub fn to_json(&self, domains: &DomainSet) -> Value {
        serde_json::json!({
            "id": self.sample_id,
            "probs": domains.to_named_map(self.probs.weights()),
        })
    }
}

/// Result of a full detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub per_iteration: Vec<Distribution>,
    pub mean: Distribution,
    #[serde(rename = "stddev")]
    pub per_domain_stddev: Vec<f64>,
    pub max_stddev_pct: f64,
}

/// Componentwise mean of the annotations' probability vectors.
pub fn aggregate_iteration(
    annotations: &[ProbabilityAnnotation],
) -> Result<Distribution, DetectError> {
    let first = annotations.first().ok_or(DetectError::EmptyInput)?;
    let k = first.probs.len();
    let mut sums = vec![0.0; k];
    for a in annotations {
        a.probs.ensure_len(k)?;
        for (s, p) in sums.iter_mut().zip(a.probs.weights()) {
            *s += p;
        }
    }
    let n = annotations.len() as f64;
    let mean: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    Ok(Distribution::normalize(&mean)?)
}

/// Averages per-iteration estimates and reports their sample standard
/// deviation (T − 1 denominator; zero when T = 1).
pub fn detect(iteration_results: &[Distribution]) -> Result<DetectionReport, DetectError> {
    let first = iteration_results.first().ok_or(DetectError::EmptyInput)?;
    let k = first.len();
    for d in iteration_results {
        d.ensure_len(k)?;
    }
    let t = iteration_results.len() as f64;
    let raw_mean: Vec<f64> = (0..k)
        .map(|j| iteration_results.iter().map(|d| d.get(j)).sum::<f64>() / t)
        .collect();
    let stddev: Vec<f64> = if iteration_results.len() < 2 {
        vec![0.0; k]
    } else {
        (0..k)
            .map(|j| {
                let ss: f64 = iteration_results
                    .iter()
                    .map(|d| (d.get(j) - raw_mean[j]).powi(2))
                    .sum();
                (ss / (t - 1.0)).sqrt()
            })
            .collect()
    };
    let max_stddev_pct = 100.0 * stddev.iter().cloned().fold(0.0, f64::max);
    Ok(DetectionReport {
        per_iteration: iteration_results.to_vec(),
        mean: Distribution::normalize(&raw_mean)?,
        per_domain_stddev: stddev,
        max_stddev_pct,
    })
}

fn read_jsonl<T>(
    path: &Path,
    mut parse: impl FnMut(Value) -> Result<T, String>,
) -> Result<Vec<T>, DetectError> {
    let file = std::fs::File::open(path).map_err(|source| DetectError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DetectError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let jsonl_err = |message: String| DetectError::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| jsonl_err(e.to_string()))?;
        out.push(parse(value).map_err(jsonl_err)?);
    }
    Ok(out)
}

/// Reads `{"id": .., "text": ..}` lines.
pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>, DetectError> {
    read_jsonl(path, |v| {
        serde_json::from_value(v).map_err(|e| e.to_string())
    })
}

/// Reads pre-computed annotations: `{"id": .., "probs": {"law": .., ..}}`.
pub fn read_annotations(
    path: &Path,
    domains: &DomainSet,
) -> Result<Vec<ProbabilityAnnotation>, DetectError> {
    read_jsonl(path, |v| {
        let id = v
            .get("id")
            .and_then(Value::as_str)
            .ok_or("missing string field \"id\"")?
            .to_string();
        let probs: &Map<String, Value> = v
            .get("probs")
            .and_then(Value::as_object)
            .ok_or("missing object field \"probs\"")?;
        let weights = domains.vector_from_map(probs).map_err(|e| e.to_string())?;
        let probs = Distribution::new(weights).map_err(|e| e.to_string())?;
        Ok(ProbabilityAnnotation {
            sample_id: id,
            probs,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn ann(id: &str, w: &[f64]) -> ProbabilityAnnotation {
        ProbabilityAnnotation {
            sample_id: id.into(),
            probs: Distribution::new(w.to_vec()).unwrap(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let d = aggregate_iteration(&[ann("a", &[0.3, 0.7])]).unwrap();
        assert_eq!(d.weights(), &[0.3, 0.7]);
        let d = aggregate_iteration(&[ann("a", &[1.0, 0.0]), ann("b", &[0.0, 1.0])]).unwrap();
        assert_eq!(d.weights(), &[0.5, 0.5]);
        let d = aggregate_iteration(&[
            ann("a", &[0.2, 0.8]),
            ann("b", &[0.4, 0.6]),
            ann("c", &[0.6, 0.4]),
        ])
        .unwrap();
        assert!((d.get(0) - 0.4).abs() < 1e-12 && (d.get(1) - 0.6).abs() < 1e-12);
        assert!(matches!(
            aggregate_iteration(&[]),
            Err(DetectError::EmptyInput)
        ));
    }

    #[test]
    fn detect_examples() {
        let d = Distribution::new(vec![0.3, 0.7]).unwrap();
        let r = detect(std::slice::from_ref(&d)).unwrap();
        assert_eq!(r.mean, d);
        assert_eq!(r.per_domain_stddev, vec![0.0, 0.0]);
        assert_eq!(r.max_stddev_pct, 0.0);

        let r = detect(&[
            Distribution::new(vec![0.6, 0.4]).unwrap(),
            Distribution::new(vec![0.4, 0.6]).unwrap(),
        ])
        .unwrap();
        assert!((r.mean.get(0) - 0.5).abs() < 1e-12);
        let want = 0.02f64.sqrt(); // sqrt((0.01 + 0.01) / 1)
        assert!((r.per_domain_stddev[0] - want).abs() < 1e-12);
        assert!((r.max_stddev_pct - 100.0 * want).abs() < 1e-9);
        assert!(matches!(detect(&[]), Err(DetectError::EmptyInput)));
    }

    #[test]
    fn report_json_shape() {
        let r = detect(&[Distribution::new(vec![0.5, 0.5]).unwrap()]).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v.as_object().unwrap().keys().collect::<Vec<_>>(),
            ["per_iteration", "mean", "stddev", "max_stddev_pct"]
        );
        let back: DetectionReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn sample_jsonl_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","text":"hello"}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id":"b","text":   }}"#).unwrap();
        drop(f);
        match read_samples(&path) {
            Err(DetectError::Jsonl { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"  \"}\n").unwrap();
        assert!(matches!(
            read_samples(&path),
            Err(DetectError::Jsonl { line: 1, .. })
        ));
    }

    #[test]
    fn annotation_jsonl_round_trip() {
        let domains = DomainSet::new(["a", "b"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let a = ann("x", &[0.25, 0.75]);
        std::fs::write(&path, format!("{}\n", a.to_json(&domains))).unwrap();
        assert_eq!(read_annotations(&path, &domains).unwrap(), vec![a]);
    }

    fn annotations(k: usize) -> impl Strategy<Value = Vec<ProbabilityAnnotation>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..30).prop_map(|rows| {
            rows.iter()
                .enumerate()
                .map(|(i, w)| ProbabilityAnnotation {
                    sample_id: i.to_string(),
                    probs: Distribution::normalize(w).unwrap(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregate_matches_brute_force_and_ignores_order(mut anns in annotations(4)) {
            let got = aggregate_iteration(&anns).unwrap();
            for j in 0..4 {
                let mut s = 0.0;
                for a in &anns { s += a.probs.weights()[j]; }
                prop_assert!((got.get(j) - s / anns.len() as f64).abs() <= 1e-12);
            }
            anns.reverse();
            let rev = aggregate_iteration(&anns).unwrap();
            for j in 0..4 {
                prop_assert!((got.get(j) - rev.get(j)).abs() <= 1e-12);
            }
        }

        #[test]
        fn detect_of_copies_is_exact(w in prop::collection::vec(0.01f64..1.0, 2..7), t in 1usize..6) {
            let d = Distribution::normalize(&w).unwrap();
            let r = detect(&vec![d.clone(); t]).unwrap();
            for j in 0..d.len() {
                prop_assert!((r.mean.get(j) - d.get(j)).abs() <= 1e-15);
            }
            prop_assert!(r.per_domain_stddev.iter().all(|&s| s <= 1e-15));
        }
    }
}
