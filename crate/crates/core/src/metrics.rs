//! Scheduling signals: learnable potential, forgetting degree and the
//! reference-model mastery ceiling.
//!
//! Both signals are clamped relative gaps, so they are invariant to a joint
//! rescaling of their two losses. Losses must be strictly positive; a zero
//! validation loss is treated as an upstream measurement bug.

use crate::domain::{DomainSet, LossVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("loss must be finite and > 0, got {0}")]
    NonPositiveLoss(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss snapshots are not consecutive: previous step {prev}, current step {current}")]
    NonConsecutiveSteps { prev: u64, current: u64 },
    #[error("domain {0} has no epoch losses")]
    EmptyEpochs(String),
    #[error("unknown domain {0:?} in epoch records")]
    UnknownDomain(String),
}

fn check_loss(loss: f64) -> Result<f64, MetricsError> {
    if loss.is_finite() && loss > 0.0 {
        Ok(loss)
    } else {
        Err(MetricsError::NonPositiveLoss(loss))
    }
}

/// `max{(ℓ_θ − ℓ_ref) / ℓ_θ, 0}`.
pub fn learnable_potential(loss_theta: f64, loss_ref: f64) -> Result<f64, MetricsError> {
    let theta = check_loss(loss_theta)?;
    let reference = check_loss(loss_ref)?;
    Ok(((theta - reference) / theta).max(0.0))
}

/// `max{(ℓ_t − ℓ_{t−1}) / ℓ_{t−1}, 0}`.
pub fn forgetting_degree(loss_t: f64, loss_prev: f64) -> Result<f64, MetricsError> {
    let now = check_loss(loss_t)?;
    let prev = check_loss(loss_prev)?;
    Ok(((now - prev) / prev).max(0.0))
}

/// Per-domain mastery-ceiling losses of the small reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReferenceLossTable {
    losses: Vec<f64>,
}

impl ReferenceLossTable {
    pub fn new(losses: Vec<f64>) -> Result<Self, MetricsError> {
        for &l in &losses {
            check_loss(l)?;
        }
        Ok(Self { losses })
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
}

impl TryFrom<Vec<f64>> for ReferenceLossTable {
    type Error = MetricsError;

    fn try_from(losses: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(losses)
    }
}

impl From<ReferenceLossTable> for Vec<f64> {
    fn from(t: ReferenceLossTable) -> Self {
        t.losses
    }
}

/// Non-negative per-domain signal (γ or φ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalVector {
    values: Vec<f64>,
}

impl SignalVector {
    pub fn zeros(k: usize) -> Self {
        Self {
            values: vec![0.0; k],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

fn same_len(expected: usize, found: usize) -> Result<(), MetricsError> {
    if expected == found {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch { expected, found })
    }
}

pub fn potential_vector(
    losses: &LossVector,
    reference: &ReferenceLossTable,
) -> Result<SignalVector, MetricsError> {
    same_len(reference.len(), losses.len())?;
    let values = losses
        .losses()
        .iter()
        .zip(reference.losses())
        .map(|(&l, &r)| learnable_potential(l, r))
        .collect::<Result<_, _>>()?;
    Ok(SignalVector { values })
}

pub fn forgetting_vector(
    losses: &LossVector,
    prev: &LossVector,
) -> Result<SignalVector, MetricsError> {
    same_len(prev.len(), losses.len())?;
    if prev.step().checked_add(1) != Some(losses.step()) {
        return Err(MetricsError::NonConsecutiveSteps {
            prev: prev.step(),
            current: losses.step(),
        });
    }
    let values = losses
        .losses()
        .iter()
        .zip(prev.losses())
        .map(|(&now, &before)| forgetting_degree(now, before))
        .collect::<Result<_, _>>()?;
    Ok(SignalVector { values })
}

/// Per domain, the lowest average loss across the reference model's epochs.
pub fn mastery_ceiling(epoch_losses: &[Vec<f64>]) -> Result<ReferenceLossTable, MetricsError> {
    let losses = epoch_losses
        .iter()
        .enumerate()
        .map(|(j, epochs)| {
            if epochs.is_empty() {
                return Err(MetricsError::EmptyEpochs(format!("#{j}")));
            }
            epochs
                .iter()
                .try_fold(f64::INFINITY, |min, &l| Ok(min.min(check_loss(l)?)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ReferenceLossTable::new(losses)
}

/// One line of a reference-model loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLossRecord {
    pub domain: String,
    pub epoch: u32,
    pub avg_loss: f64,
}

/// Groups epoch records by domain and applies [`mastery_ceiling`].
pub fn mastery_ceiling_from_records(
    records: &[EpochLossRecord],
    domains: &DomainSet,
) -> Result<ReferenceLossTable, MetricsError> {
    let mut grouped = vec![Vec::new(); domains.len()];
    for rec in records {
        let j = domains
            .index_of(&rec.domain)
            .ok_or_else(|| MetricsError::UnknownDomain(rec.domain.clone()))?;
        grouped[j].push(rec.avg_loss);
    }
    if let Some(j) = grouped.iter().position(Vec::is_empty) {
        return Err(MetricsError::EmptyEpochs(domains.name(j).to_string()));
    }
    mastery_ceiling(&grouped)
}
