//! Epoch dataset materialization.
//!
//! A [`MixPlan`] turns proportions into integer per-domain counts under a
//! fixed budget (largest-remainder apportionment). [`materialize`] then draws
//! each domain's records from its pool: without replacement when the pool is
//! large enough, otherwise by balanced duplication plus a without-replacement
//! remainder. Every random choice comes from a ChaCha stream keyed by
//! `(plan seed, domain index)`, so output files are byte-reproducible.

use crate::domain::{DistError, Distribution, DomainSet};
use crate::rng::stream_rng;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Samples per epoch used in the original experiments.
pub const DEFAULT_BUDGET: u64 = 60_000;

/// Stream reserved for the final cross-domain shuffle; domain `j` uses `j + 1`.
const SHUFFLE_STREAM: u64 = 0;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("budget {budget} is smaller than the number of domains ({k})")]
    InvalidBudget { budget: u64, k: usize },
    #[error("no pool configured for domain {0:?}")]
    MissingPool(String),
    #[error("pool for domain {domain:?} ({path}) is empty")]
    EmptyPool { domain: String, path: PathBuf },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: record is not a JSON object")]
    NotAnObject { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixPlan {
    pub budget: u64,
    pub counts: Vec<u64>,
    pub seed: u64,
}

impl MixPlan {
    /// `{"budget": .., "counts": {"law": .., ..}, "seed": ..}`.
    pub fn to_json(&self, domains: &DomainSet) -> Value {
        let counts: Map<String, Value> = domains
            .names()
            .iter()
            .zip(&self.counts)
            .map(|(n, c)| (n.clone(), Value::from(*c)))
            .collect();
        serde_json::json!({ "budget": self.budget, "counts": counts, "seed": self.seed })
    }
}

/// Largest-remainder apportionment of `budget` over `proportions`; ties on
/// the remainder go to the lower domain index.
pub fn build_mix_plan(
    proportions: &Distribution,
    budget: u64,
    seed: u64,
) -> Result<MixPlan, MixError> {
    let k = proportions.len();
    if budget < k as u64 {
        return Err(MixError::InvalidBudget { budget, k });
    }
    let quotas: Vec<f64> = proportions
        .weights()
        .iter()
        .map(|p| p * budget as f64)
        .collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).expect("finite quotas").then(a.cmp(&b))
    });
    // Float rounding can leave Σ floor slightly above or below the budget.
    if assigned <= budget {
        for &j in order.iter().cycle().take((budget - assigned) as usize) {
            counts[j] += 1;
        }
    } else {
        for &j in order
            .iter()
            .rev()
            .cycle()
            .take((assigned - budget) as usize)
        {
            counts[j] -= 1;
        }
    }

    // Every domain with positive weight gets at least one sample.
    for j in 0..k {
        if counts[j] == 0 && proportions.get(j) > 0.0 {
            let donor = (0..k)
                .filter(|&i| counts[i] >= 2)
                .max_by(|&a, &b| {
                    let sa = counts[a] as f64 - quotas[a];
                    let sb = counts[b] as f64 - quotas[b];
                    sa.partial_cmp(&sb).expect("finite quotas").then(b.cmp(&a))
                })
                .expect("budget >= k leaves a donor with at least 2");
            counts[donor] -= 1;
            counts[j] = 1;
        }
    }
    debug_assert_eq!(counts.iter().sum::<u64>(), budget);
    Ok(MixPlan {
        budget,
        counts,
        seed,
    })
}

/// A JSONL file of training records for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPool {
    pub domain: usize,
    pub path: PathBuf,
}

/// Reads a JSONL file of objects; blank lines are skipped.
pub fn read_jsonl_objects(path: &Path) -> Result<Vec<Map<String, Value>>, MixError> {
    let file = File::open(path).map_err(|source| MixError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MixError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|source| MixError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        match value {
            Value::Object(map) => records.push(map),
            _ => {
                return Err(MixError::NotAnObject {
                    path: path.to_path_buf(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(records)
}

/// Indices into a pool of `size` records for a demand of `count`.
fn select_indices(size: usize, count: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let copies = count / size;
    let remainder = count % size;
    let mut picked = Vec::with_capacity(count);
    for _ in 0..copies {
        picked.extend(0..size);
    }
    picked.extend(index::sample(rng, size, remainder));
    picked
}

/// Draws the epoch's records in memory, tagged with their domain name, in
/// final shuffled order.
pub fn assemble(
    plan: &MixPlan,
    pools: &[DomainPool],
    domains: &DomainSet,
) -> Result<Vec<Map<String, Value>>, MixError> {
    if plan.counts.len() != domains.len() {
        return Err(DistError::DimensionMismatch {
            expected: domains.len(),
            found: plan.counts.len(),
        }
        .into());
    }
    let mut out = Vec::with_capacity(plan.budget as usize);
    for (j, &count) in plan.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let name = domains.name(j);
        let pool = pools
            .iter()
            .find(|p| p.domain == j)
            .ok_or_else(|| MixError::MissingPool(name.to_string()))?;
        let records = read_jsonl_objects(&pool.path)?;
        if records.is_empty() {
            return Err(MixError::EmptyPool {
                domain: name.to_string(),
                path: pool.path.clone(),
            });
        }
        let mut rng = stream_rng(plan.seed, j as u64 + 1);
        for i in select_indices(records.len(), count as usize, &mut rng) {
            let mut rec = records[i].clone();
            rec.insert("domain".into(), Value::String(name.to_string()));
            out.push(rec);
        }
    }
    out.shuffle(&mut stream_rng(plan.seed, SHUFFLE_STREAM));
    Ok(out)
}

/// Writes the epoch JSONL to `out_path`. Returns the number of lines written.
pub fn materialize(
    plan: &MixPlan,
    pools: &[DomainPool],
    domains: &DomainSet,
    out_path: &Path,
) -> Result<usize, MixError> {
    let records = assemble(plan, pools, domains)?;
    let io_err = |source| MixError::Io {
        path: out_path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(out_path).map_err(io_err)?);
    for rec in &records {
        serde_json::to_writer(&mut w, rec).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(records.len())
}
