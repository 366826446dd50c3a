//! Domain registry and probability-vector arithmetic.
//!
//! Every per-domain vector in the crate is indexed against a [`DomainSet`],
//! whose order is fixed for the lifetime of a run.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Absolute tolerance on `|Σ w − 1|` for a valid [`Distribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default floor used by [`Distribution::inverse`].
pub const DEFAULT_INVERSE_FLOOR: f64 = 1e-3;

/// The six domains used throughout the original experiments.
pub const DEFAULT_DOMAINS: [&str; 6] = ["law", "medicine", "finance", "science", "code", "other"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("all weights are zero")]
    AllZero,
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("need at least 2 domains, got {0}")]
    InvalidK(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weights sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("inverse floor must be positive, got {0}")]
    InvalidFloor(f64),
    #[error("duplicate domain name {0:?}")]
    DuplicateDomain(String),
    #[error("domain names must be non-empty")]
    EmptyDomainName,
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("missing value for domain {0:?}")]
    MissingDomain(String),
    #[error("value for domain {0:?} is not a number")]
    NotANumber(String),
    #[error("loss {index} must be finite and > 0, got {value}")]
    NonPositiveLoss { index: usize, value: f64 },
}

/// Ordered, unique set of domain names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct DomainSet {
    names: Vec<String>,
}

impl DomainSet {
    pub fn new<I, S>(names: I) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(DistError::InvalidK(names.len()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(DistError::EmptyDomainName);
            }
            if !seen.insert(name.as_str()) {
                return Err(DistError::DuplicateDomain(name.clone()));
            }
        }
        Ok(Self { names })
    }

    /// law, medicine, finance, science, code, other.
    pub fn standard() -> Self {
        Self::new(DEFAULT_DOMAINS).expect("default domains are valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require_index(&self, name: &str) -> Result<usize, DistError> {
        self.index_of(name)
            .ok_or_else(|| DistError::UnknownDomain(name.to_string()))
    }

    /// Serializes a per-domain vector as a JSON object keyed by domain name,
    /// in domain order.
    pub fn to_named_map(&self, values: &[f64]) -> Map<String, Value> {
        debug_assert_eq!(values.len(), self.len());
        self.names
            .iter()
            .zip(values)
            .map(|(n, v)| (n.clone(), Value::from(*v)))
            .collect()
    }

    /// Inverse of [`to_named_map`](Self::to_named_map). Keys must match the
    /// set exactly.
    pub fn vector_from_map(&self, map: &Map<String, Value>) -> Result<Vec<f64>, DistError> {
        if let Some(extra) = map.keys().find(|k| self.index_of(k).is_none()) {
            return Err(DistError::UnknownDomain(extra.clone()));
        }
        self.names
            .iter()
            .map(|name| {
                let v = map
                    .get(name)
                    .ok_or_else(|| DistError::MissingDomain(name.clone()))?;
                v.as_f64()
                    .ok_or_else(|| DistError::NotANumber(name.clone()))
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for DomainSet {
    type Error = DistError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(names)
    }
}

impl From<DomainSet> for Vec<String> {
    fn from(set: DomainSet) -> Self {
        set.names
    }
}

impl fmt::Display for DomainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.names.join(", "))
    }
}

/// A probability vector over the domains of a [`DomainSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    weights: Vec<f64>,
}

fn check_entries(raw: &[f64]) -> Result<(), DistError> {
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(DistError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(DistError::NegativeWeight { index, value });
        }
    }
    Ok(())
}

impl Distribution {
    /// Validates an already-normalized vector without rescaling it.
    pub fn new(weights: Vec<f64>) -> Result<Self, DistError> {
        if weights.len() < 2 {
            return Err(DistError::InvalidK(weights.len()));
        }
        check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistError::NotNormalized { sum });
        }
        Ok(Self { weights })
    }

    /// `raw / Σ raw`.
    pub fn normalize(raw: &[f64]) -> Result<Self, DistError> {
        if raw.len() < 2 {
            return Err(DistError::InvalidK(raw.len()));
        }
        check_entries(raw)?;
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(DistError::AllZero);
        }
        if !sum.is_finite() {
            return Err(DistError::NonFinite { index: 0 });
        }
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let check: f64 = weights.iter().sum();
        debug_assert!((check - 1.0).abs() <= SUM_TOLERANCE);
        Ok(Self { weights })
    }

    pub fn uniform(k: usize) -> Result<Self, DistError> {
        if k < 2 {
            return Err(DistError::InvalidK(k));
        }
        Ok(Self {
            weights: vec![1.0 / k as f64; k],
        })
    }

    /// Point mass on `index`.
    pub fn one_hot(k: usize, index: usize) -> Result<Self, DistError> {
        if k < 2 {
            return Err(DistError::InvalidK(k));
        }
        if index >= k {
            return Err(DistError::DimensionMismatch {
                expected: k,
                found: index + 1,
            });
        }
        let mut weights = vec![0.0; k];
        weights[index] = 1.0;
        Ok(Self { weights })
    }

    /// Reciprocal reweighting: `w_j ∝ 1 / max(d_j, floor)`.
    pub fn inverse(&self, floor: f64) -> Result<Self, DistError> {
        if !floor.is_finite() || floor <= 0.0 {
            return Err(DistError::InvalidFloor(floor));
        }
        let raw: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.max(floor)).collect();
        Self::normalize(&raw)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Domain indices sorted by descending weight; ties keep index order.
    pub fn argsort_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .expect("weights are finite")
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn ensure_len(&self, k: usize) -> Result<(), DistError> {
        if self.len() != k {
            return Err(DistError::DimensionMismatch {
                expected: k,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = DistError;

    fn try_from(weights: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(weights)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.weights
    }
}

/// `Σ_j |a_j − b_j|`.
pub fn l1_distance(a: &Distribution, b: &Distribution) -> Result<f64, DistError> {
    b.ensure_len(a.len())?;
    Ok(a.weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// Per-domain losses (nats) measured at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossVector")]
pub struct LossVector {
    step: u64,
    losses: Vec<f64>,
}

#[derive(Deserialize)]
struct RawLossVector {
    step: u64,
    losses: Vec<f64>,
}

impl TryFrom<RawLossVector> for LossVector {
    type Error = DistError;

    fn try_from(raw: RawLossVector) -> Result<Self, Self::Error> {
        Self::new(raw.step, raw.losses)
    }
}

impl LossVector {
    pub fn new(step: u64, losses: Vec<f64>) -> Result<Self, DistError> {
        if let Some((index, &value)) = losses
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(DistError::NonPositiveLoss { index, value });
        }
        Ok(Self { step, losses })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn with_step(&self, step: u64) -> Self {
        Self {
            step,
            losses: self.losses.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}
