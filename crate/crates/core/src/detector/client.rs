//! Chat-completions client for the annotation model and the bounded-parallel
//! annotation loop.

use super::parse::{parse_classifier_output, ParseError};
use super::prompt::build_prompt;
use super::{DetectError, ProbabilityAnnotation, SampleRecord};
use crate::domain::DomainSet;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;
use thiserror::Error;

/// Fraction of samples that may be dropped before a run is rejected.
pub const MAX_DROP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierEndpointConfig {
    /// OpenAI-compatible base URL, e.g. `https://host/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_parallel: usize,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_ms: u64,
}

impl Default for ClassifierEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "annotator".into(),
            api_key_env: "VERSATUNE_API_KEY".into(),
            max_parallel: 8,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl ClassifierEndpointConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.max_parallel < 1 {
            return Err(DetectError::InvalidConfig(
                "max_parallel must be >= 1".into(),
            ));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(DetectError::InvalidConfig("timeout_s must be > 0".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(DetectError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Response(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Anything that answers a classification prompt with raw model text.
pub trait Classifier: Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClassifyError>;
}

/// Blocking HTTP client for a chat-completions endpoint.
pub struct HttpClassifier {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpClassifier {
    pub fn new(config: &ClassifierEndpointConfig) -> Result<Self, DetectError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: config.completions_url(),
            model: config.model_name.clone(),
            api_key: std::env::var(&config.api_key_env)
                .ok()
                .filter(|k| !k.is_empty()),
        })
    }
}

/// Request body for one prompt.
pub fn request_body(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": 0,
    })
}

/// `choices[0].message.content` of a chat-completions response.
pub fn response_content(body: &str) -> Result<String, ClassifyError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| ClassifyError::Response(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ClassifyError::Response("missing choices[0].message.content".into()))
}

impl Classifier for HttpClassifier {
    fn complete(&self, prompt: &str) -> Result<String, ClassifyError> {
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = request_body(&self.model, prompt).to_string();
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| ClassifyError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ClassifyError::Status(status));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClassifyError::Transport(e.to_string()))?;
        response_content(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_parallel: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl From<&ClassifierEndpointConfig> for RetryPolicy {
    fn from(c: &ClassifierEndpointConfig) -> Self {
        Self {
            max_parallel: c.max_parallel.max(1),
            max_retries: c.max_retries,
            backoff_base: Duration::from_millis(c.backoff_base_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedSample {
    pub sample_id: String,
    pub error: ClassifyError,
}

/// Result of annotating one batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRun {
    /// In input order.
    pub annotations: Vec<ProbabilityAnnotation>,
    pub dropped: Vec<DroppedSample>,
    pub attempted: usize,
}

fn classify_with_retry(
    classifier: &dyn Classifier,
    sample: &SampleRecord,
    domains: &DomainSet,
    policy: &RetryPolicy,
) -> Result<ProbabilityAnnotation, ClassifyError> {
    let prompt = build_prompt(sample, domains);
    let mut attempt = 0u32;
    loop {
        let result = classifier
            .complete(&prompt)
            .and_then(|raw| Ok(parse_classifier_output(&raw, domains)?));
        match result {
            Ok(probs) => {
                return Ok(ProbabilityAnnotation {
                    sample_id: sample.id.clone(),
                    probs,
                })
            }
            Err(e) if attempt >= policy.max_retries => return Err(e),
            Err(_) => {
                let delay = policy.backoff_base.saturating_mul(1u32 << attempt.min(16));
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
                attempt += 1;
            }
        }
    }
}

/// Classifies every sample with at most `max_parallel` requests in flight.
/// Samples that still fail after `max_retries` retries are dropped and
/// counted.
pub fn annotate(
    samples: &[SampleRecord],
    classifier: &dyn Classifier,
    domains: &DomainSet,
    policy: &RetryPolicy,
) -> Result<AnnotationRun, DetectError> {
    if samples.is_empty() {
        return Err(DetectError::EmptyInput);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ProbabilityAnnotation, ClassifyError>>>> =
        Mutex::new(vec![None; samples.len()]);
    let workers = policy.max_parallel.max(1).min(samples.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= samples.len() {
                    break;
                }
                let r = classify_with_retry(classifier, &samples[i], domains, policy);
                slots.lock().expect("annotation slots poisoned")[i] = Some(r);
            });
        }
    });

    let mut annotations = Vec::with_capacity(samples.len());
    let mut dropped = Vec::new();
    for (sample, slot) in samples
        .iter()
        .zip(slots.into_inner().expect("annotation slots poisoned"))
    {
        match slot.expect("every slot is filled") {
            Ok(a) => annotations.push(a),
            Err(error) => dropped.push(DroppedSample {
                sample_id: sample.id.clone(),
                error,
            }),
        }
    }
    if annotations.is_empty() {
        return Err(DetectError::EndpointUnreachable {
            attempted: samples.len(),
            last_error: dropped
                .last()
                .map(|d| d.error.to_string())
                .unwrap_or_default(),
        });
    }
    if dropped.len() as f64 > MAX_DROP_FRACTION * samples.len() as f64 {
        return Err(DetectError::TooManyDropped {
            dropped: dropped.len(),
            attempted: samples.len(),
        });
    }
    Ok(AnnotationRun {
        annotations,
        dropped,
        attempted: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::atomic::AtomicU32;

    const REPLY: &str = r#"```json
{"Law":"0.1","Medicine":"0.7","Finance":"0.05","Science":"0.1","Code":"0.03","Other":"0.02"}
```"#;

    struct Fixed;
    impl Classifier for Fixed {
        fn complete(&self, _: &str) -> Result<String, ClassifyError> {
            Ok(REPLY.into())
        }
    }

    struct AlwaysDown;
    impl Classifier for AlwaysDown {
        fn complete(&self, _: &str) -> Result<String, ClassifyError> {
            Err(ClassifyError::Status(500))
        }
    }

    /// Fails permanently for texts containing "poison"; fails the first call
    /// for texts containing "flaky".
    struct Faulty {
        calls: Mutex<HashMap<String, u32>>,
    }
    impl Classifier for Faulty {
        fn complete(&self, prompt: &str) -> Result<String, ClassifyError> {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(prompt.to_string()).or_insert(0);
            *n += 1;
            if prompt.contains("poison") || (prompt.contains("flaky") && *n == 1) {
                return Err(ClassifyError::Status(503));
            }
            Ok(REPLY.into())
        }
    }

    struct Concurrency {
        live: AtomicU32,
        peak: AtomicU32,
    }
    impl Classifier for Concurrency {
        fn complete(&self, _: &str) -> Result<String, ClassifyError> {
            let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(5));
            self.live.fetch_sub(1, Ordering::SeqCst);
            Ok(REPLY.into())
        }
    }

    fn samples(n: usize, tag: impl Fn(usize) -> &'static str) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| SampleRecord::new(format!("s{i}"), format!("{} text {i}", tag(i))).unwrap())
            .collect()
    }

    fn policy(parallel: usize) -> RetryPolicy {
        RetryPolicy {
            max_parallel: parallel,
            max_retries: 2,
            backoff_base: Duration::ZERO,
        }
    }

    #[test]
    fn fixed_reply_yields_one_annotation_per_sample() {
        let s = samples(3, |_| "plain");
        let run = annotate(&s, &Fixed, &DomainSet::standard(), &policy(2)).unwrap();
        assert_eq!(run.annotations.len(), 3);
        assert!(run.dropped.is_empty());
        assert_eq!(run.annotations[2].sample_id, "s2");
        assert!((run.annotations[0].probs.get(1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn total_failure_is_unreachable() {
        let s = samples(4, |_| "plain");
        assert!(matches!(
            annotate(&s, &AlwaysDown, &DomainSet::standard(), &policy(2)),
            Err(DetectError::EndpointUnreachable { attempted: 4, .. })
        ));
    }

    #[test]
    fn hard_failures_are_dropped_and_retries_recover() {
        let s = samples(100, |i| match i % 20 {
            0 => "poison",
            1 => "flaky",
            _ => "plain",
        });
        let c = Faulty {
            calls: Mutex::new(HashMap::new()),
        };
        let run = annotate(&s, &c, &DomainSet::standard(), &policy(4)).unwrap();
        assert_eq!(run.annotations.len(), 95);
        assert_eq!(run.dropped.len(), 5);
        assert!(run
            .dropped
            .iter()
            .all(|d| d.error == ClassifyError::Status(503)));
        // Permanent failures are tried 1 + max_retries times.
        let calls = c.calls.lock().unwrap();
        assert!(calls
            .iter()
            .filter(|(p, _)| p.contains("poison"))
            .all(|(_, &n)| n == 3));
        assert!(calls
            .iter()
            .filter(|(p, _)| p.contains("flaky"))
            .all(|(_, &n)| n == 2));
    }

    #[test]
    fn too_many_drops_fail_the_run() {
        let s = samples(10, |i| if i < 2 { "poison" } else { "plain" });
        let c = Faulty {
            calls: Mutex::new(HashMap::new()),
        };
        assert!(matches!(
            annotate(&s, &c, &DomainSet::standard(), &policy(2)),
            Err(DetectError::TooManyDropped {
                dropped: 2,
                attempted: 10
            })
        ));
    }

    #[test]
    fn parallelism_is_bounded() {
        let s = samples(40, |_| "plain");
        let c = Concurrency {
            live: AtomicU32::new(0),
            peak: AtomicU32::new(0),
        };
        annotate(&s, &c, &DomainSet::standard(), &policy(3)).unwrap();
        let peak = c.peak.load(Ordering::SeqCst);
        assert!((1..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn request_and_response_shapes() {
        let body = request_body("m", "hello");
        assert_eq!(
            body.to_string(),
            r#"{"model":"m","messages":[{"role":"user","content":"hello"}],"temperature":0}"#
        );
        let resp = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(response_content(resp).unwrap(), "hi");
        assert!(response_content(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn url_joins_base() {
        let c = ClassifierEndpointConfig {
            base_url: "http://x/v1/".into(),
            ..Default::default()
        };
        assert_eq!(c.completions_url(), "http://x/v1/chat/completions");
        let bad = ClassifierEndpointConfig {
            max_parallel: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
