//! Synthetic loss dynamics standing in for a fine-tuning run.
//!
//! Each domain's loss decays exponentially toward a floor in proportion to its
//! effective exposure `e = clip(A·P, 0, 1)` and drifts toward a ceiling in
//! proportion to `1 − e`:
//!
//! ```text
//! ℓ_j ← ℓ_j − a_j·e_j·(ℓ_j − floor_j) + b_j·(1 − e_j)·(ceiling_j − ℓ_j) + η_j
//! ```
//!
//! clipped to `[floor_j, ceiling_j]`. The noise `η` is keyed by
//! `(rng_seed, step)`, so every strategy run on the same world sees the same
//! noise sequence.
//!
//! The world also carries the base model's `knowledge` distribution. The
//! default world couples learn rates and floors to it: domains the base model
//! already knows well learn faster and reach lower losses.

use crate::domain::{DistError, Distribution, DomainSet, LossVector, DEFAULT_INVERSE_FLOOR};
use crate::metrics::ReferenceLossTable;
use crate::rng::{derive_seed, stream_rng};
use crate::scheduler::{
    Mode, ScheduleError, SchedulerConfig, SchedulerState, DEFAULT_DELTA, DEFAULT_EPSILON,
    DEFAULT_SIGMA, DEFAULT_TARGET_CAP,
};
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use thiserror::Error;

pub const DEFAULT_KNOWLEDGE: [f64; 6] = [0.10, 0.15, 0.10, 0.20, 0.15, 0.30];
pub const DEFAULT_COUPLING: f64 = 0.6;
pub const DEFAULT_NOISE: f64 = 0.02;
pub const DEFAULT_INITIAL_LOSS: f64 = 2.5;
pub const DEFAULT_CEILING: f64 = 3.5;
pub const DEFAULT_LEARN_RATE: f64 = 0.5;
pub const DEFAULT_FORGET_RATE: f64 = 0.15;
pub const DEFAULT_FLOOR: f64 = 1.0;
/// Reference losses sit this far above the floors.
pub const REFERENCE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("steps must be >= 1")]
    NoSteps,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub losses: Vec<f64>,
    pub floor: Vec<f64>,
    pub ceiling: Vec<f64>,
    pub learn_rate: Vec<f64>,
    pub forget_rate: Vec<f64>,
    /// `affinity[j][i]`: how much training on domain `i` counts as exposure to `j`.
    pub affinity: Vec<Vec<f64>>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// Base model's pretrained domain mass; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<Distribution>,
    #[serde(default)]
    pub step: u64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

/// Six-domain transfer matrix: law↔finance 0.3, medicine↔science 0.3,
/// code→science 0.2.
pub fn default_affinity() -> Vec<Vec<f64>> {
    let mut a = identity(6);
    a[0][2] = 0.3;
    a[2][0] = 0.3;
    a[1][3] = 0.3;
    a[3][1] = 0.3;
    a[3][4] = 0.2;
    a
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl SimWorld {
    /// The shipped six-domain world.
    pub fn default_world() -> Self {
        let knowledge = Distribution::new(DEFAULT_KNOWLEDGE.to_vec()).expect("sums to one");
        Self::coupled(knowledge, DEFAULT_COUPLING, default_affinity())
    }

    /// Learn rate and floor scaled by `1 ± coupling·(k·knowledge_j − 1)`.
    /// Coupling 0 gives identical per-domain parameters.
    pub fn coupled(knowledge: Distribution, coupling: f64, affinity: Vec<Vec<f64>>) -> Self {
        let k = knowledge.len();
        let lift: Vec<f64> = knowledge
            .weights()
            .iter()
            .map(|w| coupling * (k as f64 * w - 1.0))
            .collect();
        Self {
            losses: vec![DEFAULT_INITIAL_LOSS; k],
            floor: lift
                .iter()
                .map(|l| (DEFAULT_FLOOR * (1.0 - l)).clamp(0.2, 2.2))
                .collect(),
            ceiling: vec![DEFAULT_CEILING; k],
            learn_rate: lift
                .iter()
                .map(|l| (DEFAULT_LEARN_RATE * (1.0 + l)).clamp(0.05, 1.0))
                .collect(),
            forget_rate: vec![DEFAULT_FORGET_RATE; k],
            affinity,
            rng_seed: 0,
            noise_scale: DEFAULT_NOISE,
            knowledge: Some(knowledge),
            step: 0,
        }
    }

    /// Identical per-domain parameters, identity affinity, no noise.
    pub fn symmetric(k: usize) -> Self {
        Self {
            losses: vec![DEFAULT_INITIAL_LOSS; k],
            floor: vec![DEFAULT_FLOOR; k],
            ceiling: vec![DEFAULT_CEILING; k],
            learn_rate: vec![DEFAULT_LEARN_RATE; k],
            forget_rate: vec![DEFAULT_FORGET_RATE; k],
            affinity: identity(k),
            rng_seed: 0,
            noise_scale: 0.0,
            knowledge: None,
            step: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.losses.len()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn knowledge(&self) -> Distribution {
        self.knowledge
            .clone()
            .unwrap_or_else(|| Distribution::uniform(self.k()).expect("k >= 1"))
    }

    pub fn loss_vector(&self, step: u64) -> Result<LossVector, DistError> {
        LossVector::new(step, self.losses.clone())
    }

    /// Reference losses at `floor + 0.05`.
    pub fn default_reference(&self) -> ReferenceLossTable {
        ReferenceLossTable::new(self.floor.iter().map(|f| f + REFERENCE_MARGIN).collect())
            .expect("floors are positive")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let k = self.k();
        let bad = |m: String| Err(SimError::InvalidWorld(m));
        if k == 0 {
            return bad("no domains".into());
        }
        for (name, v) in [
            ("floor", &self.floor),
            ("ceiling", &self.ceiling),
            ("learn_rate", &self.learn_rate),
            ("forget_rate", &self.forget_rate),
        ] {
            if v.len() != k {
                return bad(format!("{name} has {} entries, expected {k}", v.len()));
            }
        }
        for j in 0..k {
            let (l, f, c) = (self.losses[j], self.floor[j], self.ceiling[j]);
            if !(f > 0.0 && f < c && c.is_finite()) {
                return bad(format!(
                    "domain {j}: need 0 < floor < ceiling, got {f}, {c}"
                ));
            }
            let in_range = if self.step == 0 {
                f < l && l <= c
            } else {
                f <= l && l <= c
            };
            if !in_range {
                return bad(format!("domain {j}: loss {l} outside ({f}, {c}]"));
            }
            let a = self.learn_rate[j];
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("domain {j}: learn_rate {a} outside (0, 1]"));
            }
            let b = self.forget_rate[j];
            if !(0.0..1.0).contains(&b) {
                return bad(format!("domain {j}: forget_rate {b} outside [0, 1)"));
            }
        }
        if self.affinity.len() != k || self.affinity.iter().any(|row| row.len() != k) {
            return bad(format!("affinity must be {k}x{k}"));
        }
        for (j, row) in self.affinity.iter().enumerate() {
            if row[j] != 1.0 {
                return bad(format!("affinity[{j}][{j}] must be 1"));
            }
            if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(format!("affinity row {j} has entries outside [0, 1]"));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            ));
        }
        if let Some(know) = &self.knowledge {
            know.ensure_len(k)?;
        }
        Ok(())
    }

    /// Effective exposure `clip(A·P, 0, 1)`.
    pub fn exposure(&self, proportions: &Distribution) -> Vec<f64> {
        self.affinity
            .iter()
            .map(|row| {
                row.iter()
                    .zip(proportions.weights())
                    .map(|(a, p)| a * p)
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            })
            .collect()
    }

    /// One training step under `proportions`.
    pub fn sim_step(
        &self,
        proportions: &Distribution,
        noise_scale: f64,
    ) -> Result<SimWorld, SimError> {
        let k = self.k();
        if proportions.len() != k {
            return Err(SimError::DimensionMismatch {
                expected: k,
                found: proportions.len(),
            });
        }
        let exposure = self.exposure(proportions);
        let noise: Vec<f64> = if noise_scale > 0.0 {
            let normal =
                Normal::new(0.0, noise_scale).map_err(|e| SimError::InvalidWorld(e.to_string()))?;
            let mut rng = stream_rng(derive_seed(self.rng_seed, "sim-noise", 0), self.step);
            (0..k).map(|_| normal.sample(&mut rng)).collect()
        } else {
            vec![0.0; k]
        };
        let losses = (0..k)
            .map(|j| {
                let (l, f, c, e) = (self.losses[j], self.floor[j], self.ceiling[j], exposure[j]);
                let next = l - self.learn_rate[j] * e * (l - f)
                    + self.forget_rate[j] * (1.0 - e) * (c - l)
                    + noise[j];
                next.clamp(f, c)
            })
            .collect();
        Ok(SimWorld {
            losses,
            step: self.step + 1,
            ..self.clone()
        })
    }
}

/// Free-function form of [`SimWorld::sim_step`].
pub fn sim_step(
    world: &SimWorld,
    proportions: &Distribution,
    noise_scale: f64,
) -> Result<SimWorld, SimError> {
    world.sim_step(proportions, noise_scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Uniform,
    /// Inverse of the knowledge distribution.
    Inverse,
    /// Multi-ability scheduling from the knowledge distribution.
    Versatune,
    /// Knowledge distribution held fixed.
    VersatuneConstant,
    SingleDomain(usize),
    Expansion(usize),
    /// Expansion with the gate forced open.
    ExpansionUncapped(usize),
}

impl Strategy {
    pub fn target(&self) -> Option<usize> {
        match *self {
            Strategy::SingleDomain(e) | Strategy::Expansion(e) | Strategy::ExpansionUncapped(e) => {
                Some(e)
            }
            _ => None,
        }
    }

    pub fn label(&self, domains: &DomainSet) -> String {
        match *self {
            Strategy::Uniform => "uniform".into(),
            Strategy::Inverse => "inverse".into(),
            Strategy::Versatune => "versatune".into(),
            Strategy::VersatuneConstant => "versatune_constant".into(),
            Strategy::SingleDomain(e) => format!("single_domain({})", domains.name(e)),
            Strategy::Expansion(e) => format!("expansion({})", domains.name(e)),
            Strategy::ExpansionUncapped(e) => format!("expansion_uncapped({})", domains.name(e)),
        }
    }

    /// Accepts labels such as `versatune`, `VersatuneConstant`,
    /// `single_domain(law)` or `Expansion(medicine)`, case-insensitively.
    pub fn parse(raw: &str, domains: &DomainSet) -> Result<Self, SimError> {
        let unknown = || SimError::UnknownStrategy(raw.to_string());
        let s = raw.trim();
        let (head, arg) = match s.split_once('(') {
            Some((h, rest)) => (h, Some(rest.strip_suffix(')').ok_or_else(unknown)?.trim())),
            None => (s, None),
        };
        let head: String = head
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        let target = |arg: Option<&str>| -> Result<usize, SimError> {
            let name = arg.ok_or_else(unknown)?;
            domains
                .names()
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name))
                .ok_or_else(unknown)
        };
        match (head.as_str(), arg) {
            ("uniform", None) => Ok(Strategy::Uniform),
            ("inverse", None) => Ok(Strategy::Inverse),
            ("versatune", None) => Ok(Strategy::Versatune),
            ("versatuneconstant", None) => Ok(Strategy::VersatuneConstant),
            ("singledomain", a) => Ok(Strategy::SingleDomain(target(a)?)),
            ("expansion", a) => Ok(Strategy::Expansion(target(a)?)),
            ("expansionuncapped", a) => Ok(Strategy::ExpansionUncapped(target(a)?)),
            _ => Err(unknown()),
        }
    }
}

/// Scheduler knobs used by the scheduled strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub sigma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub target_cap: f64,
    pub inverse_floor: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
            target_cap: DEFAULT_TARGET_CAP,
            inverse_floor: DEFAULT_INVERSE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub proportions: Distribution,
    /// Losses after training on `proportions`, labelled with the step.
    pub losses: LossVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub label: String,
    pub target: Option<usize>,
    pub initial: LossVector,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn k(&self) -> usize {
        self.initial.len()
    }

    pub fn final_losses(&self) -> &[f64] {
        self.steps
            .last()
            .map_or(self.initial.losses(), |s| s.losses.losses())
    }

    pub fn final_mean(&self) -> f64 {
        let l = self.final_losses();
        l.iter().sum::<f64>() / l.len() as f64
    }

    /// Losses after `step` updates (0 is the initial state).
    pub fn losses_at(&self, step: usize) -> &[f64] {
        if step == 0 {
            self.initial.losses()
        } else {
            self.steps[step - 1].losses.losses()
        }
    }

    /// `final − initial` per domain.
    pub fn deltas(&self) -> Vec<f64> {
        self.final_losses()
            .iter()
            .zip(self.initial.losses())
            .map(|(f, i)| f - i)
            .collect()
    }

    /// One `{"step", "proportions", "losses"}` object per line.
    pub fn to_jsonl(&self, domains: &DomainSet) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let row = json!({
                "step": s.losses.step(),
                "proportions": domains.to_named_map(s.proportions.weights()),
                "losses": domains.to_named_map(s.losses.losses()),
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }
}

/// Closed loop: at step `t` the world's current losses (labelled `t`) go to
/// the strategy, and the world then trains on the returned proportions.
pub fn run_strategy(
    world: &SimWorld,
    strategy: Strategy,
    reference: &ReferenceLossTable,
    steps: u64,
    params: &StrategyParams,
    domains: &DomainSet,
) -> Result<Trajectory, SimError> {
    if steps < 1 {
        return Err(SimError::NoSteps);
    }
    world.validate()?;
    let k = world.k();
    if domains.len() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            found: domains.len(),
        });
    }
    if reference.len() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            found: reference.len(),
        });
    }
    if let Some(e) = strategy.target() {
        if e >= k {
            return Err(SimError::InvalidWorld(format!(
                "target {e} out of range for k={k}"
            )));
        }
    }
    let knowledge = world.knowledge();
    let fixed = match strategy {
        Strategy::Uniform => Some(Distribution::uniform(k)?),
        Strategy::Inverse => Some(knowledge.inverse(params.inverse_floor)?),
        Strategy::VersatuneConstant => Some(knowledge.clone()),
        Strategy::SingleDomain(e) => Some(Distribution::one_hot(k, e)?),
        _ => None,
    };
    let config = match strategy {
        Strategy::Expansion(e) | Strategy::ExpansionUncapped(e) => SchedulerConfig {
            mode: Mode::Expansion,
            target_domain: Some(e),
            bypass_gate: matches!(strategy, Strategy::ExpansionUncapped(_)),
            ..SchedulerConfig::default()
        },
        _ => SchedulerConfig::robustness(),
    };
    let config = SchedulerConfig {
        sigma: params.sigma,
        delta: params.delta,
        epsilon: params.epsilon,
        target_cap: params.target_cap,
        total_steps: steps,
        ..config
    };
    if fixed.is_none() {
        config.validate(k)?;
    }

    let mut state = SchedulerState::init(knowledge);
    let mut current = world.clone();
    let initial = current.loss_vector(0)?;
    let mut out = Vec::with_capacity(steps as usize);
    for t in 1..=steps {
        let proportions = match &fixed {
            Some(p) => p.clone(),
            None => {
                state.advance(&current.loss_vector(t)?, reference, &config)?;
                state.proportions.clone()
            }
        };
        current = current.sim_step(&proportions, current.noise_scale)?;
        out.push(TrajectoryStep {
            proportions,
            losses: current.loss_vector(t)?,
        });
    }
    Ok(Trajectory {
        label: strategy.label(domains),
        target: strategy.target(),
        initial,
        steps: out,
    })
}

/// Runs every strategy on every seed; result is indexed `[seed][strategy]`.
/// Seeds run in parallel on independent worlds.
pub fn run_seeds(
    world: &SimWorld,
    strategies: &[Strategy],
    reference: &ReferenceLossTable,
    steps: u64,
    params: &StrategyParams,
    domains: &DomainSet,
    seeds: &[u64],
) -> Result<Vec<Vec<Trajectory>>, SimError> {
    let run_one = |seed: u64| -> Result<Vec<Trajectory>, SimError> {
        let w = world.clone().with_seed(seed);
        strategies
            .iter()
            .map(|&s| run_strategy(&w, s, reference, steps, params, domains))
            .collect()
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| run_one(s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub label: String,
    /// 1 = lowest final mean loss.
    pub rank: usize,
    pub final_mean_loss: f64,
    pub deltas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Target's final − initial loss (negative = improvement).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_delta: Option<f64>,
    /// Sum of non-target final − initial losses (positive = degradation).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_target_delta_sum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub steps: usize,
    pub strategies: Vec<StrategySummary>,
}

pub fn compare_report(trajectories: &[Trajectory]) -> Result<ComparisonReport, SimError> {
    let Some(first) = trajectories.first() else {
        return Ok(ComparisonReport {
            steps: 0,
            strategies: Vec::new(),
        });
    };
    let (k, steps) = (first.k(), first.steps.len());
    for t in trajectories {
        if t.k() != k {
            return Err(SimError::DimensionMismatch {
                expected: k,
                found: t.k(),
            });
        }
        if t.steps.len() != steps {
            return Err(SimError::DimensionMismatch {
                expected: steps,
                found: t.steps.len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.sort_by(|&a, &b| {
        trajectories[a]
            .final_mean()
            .total_cmp(&trajectories[b].final_mean())
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; trajectories.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let strategies = trajectories
        .iter()
        .zip(rank)
        .map(|(t, rank)| {
            let deltas = t.deltas();
            let (target_delta, non_target_delta_sum) = match t.target {
                Some(e) => (
                    Some(deltas[e]),
                    Some(
                        deltas
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != e)
                            .map(|(_, d)| d)
                            .sum(),
                    ),
                ),
                None => (None, None),
            };
            StrategySummary {
                label: t.label.clone(),
                rank,
                final_mean_loss: t.final_mean(),
                deltas,
                target: t.target,
                target_delta,
                non_target_delta_sum,
            }
        })
        .collect();
    Ok(ComparisonReport { steps, strategies })
}

impl ComparisonReport {
    pub fn to_json(&self, domains: &DomainSet) -> Value {
        let rows: Vec<Value> = self
            .strategies
            .iter()
            .map(|s| {
                let mut row = json!({
                    "label": s.label,
                    "rank": s.rank,
                    "final_mean_loss": s.final_mean_loss,
                    "deltas": domains.to_named_map(&s.deltas),
                });
                if let (Some(e), Some(td), Some(nt)) =
                    (s.target, s.target_delta, s.non_target_delta_sum)
                {
                    row["target"] = json!(domains.name(e));
                    row["target_delta"] = json!(td);
                    row["non_target_delta_sum"] = json!(nt);
                }
                row
            })
            .collect();
        json!({ "steps": self.steps, "strategies": rows })
    }

    /// Aligned plain-text table, one row per strategy.
    pub fn to_table(&self, domains: &DomainSet) -> String {
        let mut header = vec!["strategy".to_string(), "rank".into(), "final_mean".into()];
        header.extend(domains.names().iter().map(|n| format!("d_{n}")));
        header.push("target_d".into());
        header.push("non_target_sum".into());
        let rows: Vec<Vec<String>> = self
            .strategies
            .iter()
            .map(|s| {
                let mut row = vec![
                    s.label.clone(),
                    s.rank.to_string(),
                    format!("{:.4}", s.final_mean_loss),
                ];
                row.extend(s.deltas.iter().map(|d| format!("{d:+.4}")));
                row.push(s.target_delta.map_or("-".into(), |d| format!("{d:+.4}")));
                row.push(
                    s.non_target_delta_sum
                        .map_or("-".into(), |d| format!("{d:+.4}")),
                );
                row
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in std::iter::once(&header).chain(&rows) {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// `strategy,step,domain,proportion,loss` rows for plotting.
pub fn trajectories_csv(trajectories: &[Trajectory], domains: &DomainSet) -> String {
    let mut out = String::from("strategy,step,domain,proportion,loss\n");
    for t in trajectories {
        for (j, l) in t.initial.losses().iter().enumerate() {
            let _ = writeln!(out, "{},0,{},,{l}", t.label, domains.name(j));
        }
        for s in &t.steps {
            for j in 0..t.k() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    t.label,
                    s.losses.step(),
                    domains.name(j),
                    s.proportions.get(j),
                    s.losses.losses()[j]
                );
            }
        }
    }
    out
}
