//! Dynamic domain-proportion scheduling.
//!
//! Two modes share one state machine. In [`Mode::Robustness`] every step
//! scales each proportion by `1 + σγ_j` and renormalizes. [`Mode::Expansion`]
//! additionally grows a target domain by a fixed increment whenever the
//! target's learnable potential outweighs the average forgetting of the other
//! domains, shrinking the others proportionally to their rescaled weights.

use crate::domain::{DistError, Distribution, LossVector};
use crate::metrics::{
    forgetting_vector, potential_vector, MetricsError, ReferenceLossTable, SignalVector,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.10;
pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_TARGET_CAP: f64 = 0.95;
pub const DEFAULT_TOTAL_STEPS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("step order violation: expected feedback for step {expected}, got step {found}")]
    StepOrderViolation { expected: u64, found: u64 },
    #[error("schedule already completed all {0} steps")]
    Completed(u64),
    #[error("operation requires {0:?} mode")]
    WrongMode(Mode),
    #[error("feedback exhausted after {got} of {expected} steps")]
    FeedbackExhausted { expected: u64, got: u64 },
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Robustness,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub mode: Mode,
    pub sigma: f64,
    pub total_steps: u64,
    pub delta: f64,
    pub epsilon: f64,
    /// Target domain index (expansion only).
    pub target_domain: Option<usize>,
    /// Largest proportion the target may be raised to.
    pub target_cap: f64,
    /// Treat the expansion gate as always open (ablation). The cap still applies.
    #[serde(default)]
    pub bypass_gate: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Robustness,
            sigma: DEFAULT_SIGMA,
            total_steps: DEFAULT_TOTAL_STEPS,
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
            target_domain: None,
            target_cap: DEFAULT_TARGET_CAP,
            bypass_gate: false,
        }
    }
}

impl SchedulerConfig {
    pub fn robustness() -> Self {
        Self::default()
    }

    pub fn expansion(target: usize) -> Self {
        Self {
            mode: Mode::Expansion,
            target_domain: Some(target),
            ..Self::default()
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), ScheduleError> {
        let bad = |msg: String| Err(ScheduleError::InvalidConfig(msg));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.total_steps < 1 {
            return bad("total_steps must be >= 1".into());
        }
        if self.mode == Mode::Expansion {
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return bad(format!("delta must be in (0, 1), got {}", self.delta));
            }
            if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
                return bad(format!("epsilon must be > 0, got {}", self.epsilon));
            }
            match self.target_domain {
                Some(e) if e < k => {}
                Some(e) => return bad(format!("target_domain {e} out of range for k={k}")),
                None => return bad("expansion mode needs target_domain".into()),
            }
            if !(self.target_cap > self.delta && self.target_cap <= 0.99) {
                return bad(format!(
                    "target_cap must satisfy delta < cap <= 0.99, got {}",
                    self.target_cap
                ));
            }
        }
        Ok(())
    }
}

/// Telemetry for a gated expansion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionAdjustment {
    /// `P_e^(t) / P_e^(t−1)`; absent when the previous share was zero.
    pub alpha: Option<f64>,
    /// `1 − P_e^(t−1)`.
    pub beta_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub proportions: Distribution,
    pub losses: LossVector,
    pub gamma: SignalVector,
    pub phi: SignalVector,
    pub gate: bool,
    pub cap_blocked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<ExpansionAdjustment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub step: u64,
    pub proportions: Distribution,
    pub prev_losses: Option<LossVector>,
    pub history: Vec<StepRecord>,
}

/// `(1/k) Σ_{j≠e} φ_j < ε γ_e`. The divisor is `k`, not `k − 1`.
pub fn expansion_gate(
    phi: &SignalVector,
    gamma_target: f64,
    epsilon: f64,
    k: usize,
    target: usize,
) -> bool {
    let others: f64 = phi
        .values()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, v)| v)
        .sum();
    others / (k as f64) < epsilon * gamma_target
}

impl SchedulerState {
    /// Step 0 with the detected knowledge distribution as the starting mix.
    pub fn init(detected: Distribution) -> Self {
        Self {
            step: 0,
            proportions: detected,
            prev_losses: None,
            history: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.proportions.len()
    }

    fn check_order(
        &self,
        losses: &LossVector,
        config: &SchedulerConfig,
    ) -> Result<(), ScheduleError> {
        if self.step >= config.total_steps {
            return Err(ScheduleError::Completed(config.total_steps));
        }
        if losses.step() != self.step + 1 {
            return Err(ScheduleError::StepOrderViolation {
                expected: self.step + 1,
                found: losses.step(),
            });
        }
        if losses.len() != self.k() {
            return Err(DistError::DimensionMismatch {
                expected: self.k(),
                found: losses.len(),
            }
            .into());
        }
        Ok(())
    }

    fn phi_for(&self, losses: &LossVector) -> Result<SignalVector, ScheduleError> {
        Ok(match &self.prev_losses {
            Some(prev) => forgetting_vector(losses, prev)?,
            None => SignalVector::zeros(self.k()),
        })
    }

    /// `P ⊙ (1 + σγ)`, before renormalization.
    fn scaled(&self, gamma: &SignalVector, sigma: f64) -> Vec<f64> {
        self.proportions
            .weights()
            .iter()
            .zip(gamma.values())
            .map(|(p, g)| p * (1.0 + sigma * g))
            .collect()
    }

    fn commit(&mut self, losses: &LossVector, record: StepRecord) {
        self.step = record.step;
        self.proportions = record.proportions.clone();
        self.prev_losses = Some(losses.clone());
        self.history.push(record);
    }

    /// One multi-ability update. The state is left untouched on error.
    pub fn step_robustness(
        &mut self,
        losses: &LossVector,
        reference: &ReferenceLossTable,
        config: &SchedulerConfig,
    ) -> Result<(), ScheduleError> {
        self.check_order(losses, config)?;
        let gamma = potential_vector(losses, reference)?;
        let phi = self.phi_for(losses)?;
        let proportions = Distribution::normalize(&self.scaled(&gamma, config.sigma))?;
        let record = StepRecord {
            step: losses.step(),
            proportions,
            losses: losses.clone(),
            gamma,
            phi,
            gate: false,
            cap_blocked: false,
            adjustment: None,
        };
        self.commit(losses, record);
        Ok(())
    }

    /// One domain-expansion update. The state is left untouched on error.
    pub fn step_expansion(
        &mut self,
        losses: &LossVector,
        reference: &ReferenceLossTable,
        config: &SchedulerConfig,
    ) -> Result<(), ScheduleError> {
        if config.mode != Mode::Expansion {
            return Err(ScheduleError::WrongMode(Mode::Expansion));
        }
        let target = config.target_domain.ok_or_else(|| {
            ScheduleError::InvalidConfig("expansion mode needs target_domain".into())
        })?;
        self.check_order(losses, config)?;
        let k = self.k();
        let gamma = potential_vector(losses, reference)?;
        let phi = self.phi_for(losses)?;
        let scaled = self.scaled(&gamma, config.sigma);

        let gate = config.bypass_gate
            || expansion_gate(&phi, gamma.get(target), config.epsilon, k, target);
        let prev_target = self.proportions.get(target);
        let raised = prev_target + config.delta;
        let cap_blocked = gate && raised > config.target_cap;

        let (proportions, adjustment) = if gate && !cap_blocked {
            let rest: f64 = scaled
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(_, w)| w)
                .sum();
            let remaining = 1.0 - prev_target - config.delta;
            let weights: Vec<f64> = if rest > 0.0 {
                scaled
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| {
                        if j == target {
                            raised
                        } else {
                            w / rest * remaining
                        }
                    })
                    .collect()
            } else {
                // Only reachable when every non-target weight is zero.
                let share = remaining / (k - 1) as f64;
                (0..k)
                    .map(|j| if j == target { raised } else { share })
                    .collect()
            };
            let adjustment = ExpansionAdjustment {
                alpha: (prev_target > 0.0).then(|| raised / prev_target),
                beta_share: 1.0 - prev_target,
            };
            (Distribution::new(weights)?, Some(adjustment))
        } else {
            (Distribution::normalize(&scaled)?, None)
        };

        let record = StepRecord {
            step: losses.step(),
            proportions,
            losses: losses.clone(),
            gamma,
            phi,
            gate,
            cap_blocked,
            adjustment,
        };
        self.commit(losses, record);
        Ok(())
    }

    /// Dispatches on `config.mode`.
    pub fn advance(
        &mut self,
        losses: &LossVector,
        reference: &ReferenceLossTable,
        config: &SchedulerConfig,
    ) -> Result<(), ScheduleError> {
        match config.mode {
            Mode::Robustness => self.step_robustness(losses, reference, config),
            Mode::Expansion => self.step_expansion(losses, reference, config),
        }
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.history.last()
    }
}

/// Folds the configured step over exactly `total_steps − state.step`
/// snapshots from `feedback`.
pub fn run_schedule<I>(
    mut state: SchedulerState,
    feedback: I,
    reference: &ReferenceLossTable,
    config: &SchedulerConfig,
) -> Result<SchedulerState, ScheduleError>
where
    I: IntoIterator<Item = LossVector>,
{
    config.validate(state.k())?;
    let mut feedback = feedback.into_iter();
    while state.step < config.total_steps {
        let losses = feedback.next().ok_or(ScheduleError::FeedbackExhausted {
            expected: config.total_steps,
            got: state.step,
        })?;
        state.advance(&losses, reference, config)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(w: &[f64]) -> Distribution {
        Distribution::new(w.to_vec()).unwrap()
    }

    fn lv(step: u64, l: &[f64]) -> LossVector {
        LossVector::new(step, l.to_vec()).unwrap()
    }

    fn table(l: &[f64]) -> ReferenceLossTable {
        ReferenceLossTable::new(l.to_vec()).unwrap()
    }

    /// Losses that produce the requested γ for a reference of 1.0.
    fn losses_for_gamma(step: u64, gamma: &[f64]) -> LossVector {
        lv(
            step,
            &gamma.iter().map(|g| 1.0 / (1.0 - g)).collect::<Vec<_>>(),
        )
    }

    #[test]
    fn init_keeps_detected_distribution() {
        let d = dist(&[0.3, 0.7]);
        let s = SchedulerState::init(d.clone());
        assert_eq!(s.step, 0);
        assert_eq!(s.proportions, d);
        assert!(s.history.is_empty());
    }

    #[test]
    fn robustness_zero_gamma_is_fixed_point() {
        let mut s = SchedulerState::init(dist(&[0.3, 0.7]));
        s.step_robustness(
            &lv(1, &[1.0, 1.0]),
            &table(&[1.0, 1.0]),
            &SchedulerConfig::default(),
        )
        .unwrap();
        assert_eq!(s.proportions.weights(), &[0.3, 0.7]);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn robustness_uniform_gamma_cancels() {
        let mut s = SchedulerState::init(dist(&[0.2, 0.3, 0.5]));
        s.step_robustness(
            &losses_for_gamma(1, &[0.4; 3]),
            &table(&[1.0; 3]),
            &SchedulerConfig::default(),
        )
        .unwrap();
        for (a, b) in s.proportions.weights().iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn robustness_worked_example() {
        let mut s = SchedulerState::init(dist(&[0.5, 0.5]));
        s.step_robustness(
            &lv(1, &[2.0 / 1.2, 1.0]),
            &table(&[1.0, 1.0]),
            &SchedulerConfig::default(),
        )
        .unwrap();
        let got = s.proportions.weights();
        assert!((got[0] - 6.0 / 11.0).abs() < 1e-12);
        assert!((got[1] - 5.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn step_order_is_enforced_without_mutation() {
        let mut s = SchedulerState::init(dist(&[0.5, 0.5]));
        let before = s.clone();
        let err = s
            .step_robustness(
                &lv(2, &[1.0, 1.0]),
                &table(&[1.0, 1.0]),
                &SchedulerConfig::default(),
            )
            .unwrap_err();
        assert_eq!(
            err,
            ScheduleError::StepOrderViolation {
                expected: 1,
                found: 2
            }
        );
        assert_eq!(s, before);

        let cfg = SchedulerConfig {
            total_steps: 1,
            ..Default::default()
        };
        s.step_robustness(&lv(1, &[1.0, 1.0]), &table(&[1.0, 1.0]), &cfg)
            .unwrap();
        assert_eq!(
            s.step_robustness(&lv(2, &[1.0, 1.0]), &table(&[1.0, 1.0]), &cfg),
            Err(ScheduleError::Completed(1))
        );
    }

    #[test]
    fn gate_examples() {
        assert!(expansion_gate(&SignalVector::zeros(6), 0.1, 1.0, 6, 1));
        let phi: SignalVector = serde_json::from_str("[0.2,0.0,0.2,0.2,0.2,0.2]").unwrap();
        // (1/6)·1.0 ≈ 0.1667 ≥ 0.1
        assert!(!expansion_gate(&phi, 0.1, 1.0, 6, 1));
        assert!(!expansion_gate(&SignalVector::zeros(6), 0.0, 1.0, 6, 1));
    }

    #[test]
    fn gate_divides_by_k_not_k_minus_one() {
        // Σ_{j≠e} φ = 0.5 over k = 6: 0.5/6 = 0.0833 < 0.09 < 0.5/5 = 0.1
        let phi: SignalVector = serde_json::from_str("[0.1,0.0,0.1,0.1,0.1,0.1]").unwrap();
        assert!(expansion_gate(&phi, 0.09, 1.0, 6, 1));
    }

    #[test]
    fn expansion_first_step_raises_target_by_delta() {
        let mut s = SchedulerState::init(Distribution::uniform(6).unwrap());
        let cfg = SchedulerConfig::expansion(1);
        let losses = lv(1, &[2.0, 2.5, 1.8, 2.2, 1.5, 3.0]);
        s.step_expansion(&losses, &table(&[1.0; 6]), &cfg).unwrap();
        let rec = s.last().unwrap();
        assert!(rec.gate);
        assert!(!rec.cap_blocked);
        assert_eq!(rec.phi.values(), &[0.0; 6]);
        assert!((s.proportions.get(1) - (1.0 / 6.0 + 0.1)).abs() < 1e-15);
        assert!((s.proportions.sum() - 1.0).abs() < 1e-12);
        let adj = rec.adjustment.as_ref().unwrap();
        assert!((adj.beta_share - 5.0 / 6.0).abs() < 1e-15);
        assert!((adj.alpha.unwrap() - (1.0 / 6.0 + 0.1) * 6.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_closed_gate_matches_robustness() {
        let reference = table(&[1.0; 3]);
        let cfg = SchedulerConfig::expansion(0);
        let start = dist(&[0.2, 0.3, 0.5]);
        // Target at its reference loss: γ_e = 0 keeps the gate shut.
        let feed = [lv(1, &[1.0, 2.0, 1.2]), lv(2, &[1.0, 2.4, 1.5])];

        let mut e = SchedulerState::init(start.clone());
        let mut r = SchedulerState::init(start);
        for l in &feed {
            e.step_expansion(l, &reference, &cfg).unwrap();
            r.step_robustness(l, &reference, &cfg).unwrap();
        }
        assert!(e.history.iter().all(|rec| !rec.gate));
        assert_eq!(e.proportions, r.proportions);
    }

    #[test]
    fn expansion_cap_blocks_increment() {
        let reference = table(&[1.0; 3]);
        let cfg = SchedulerConfig::expansion(0);
        let mut s = SchedulerState::init(dist(&[0.92, 0.05, 0.03]));
        let losses = lv(1, &[2.0, 1.5, 1.5]);
        s.step_expansion(&losses, &reference, &cfg).unwrap();
        let rec = s.last().unwrap();
        assert!(rec.gate);
        assert!(rec.cap_blocked);
        assert!(rec.adjustment.is_none());

        let mut r = SchedulerState::init(dist(&[0.92, 0.05, 0.03]));
        r.step_robustness(&losses, &reference, &cfg).unwrap();
        assert_eq!(s.proportions, r.proportions);
    }

    #[test]
    fn expansion_requires_mode_and_valid_config() {
        let mut s = SchedulerState::init(Distribution::uniform(3).unwrap());
        assert_eq!(
            s.step_expansion(
                &lv(1, &[1.0; 3]),
                &table(&[1.0; 3]),
                &SchedulerConfig::default()
            ),
            Err(ScheduleError::WrongMode(Mode::Expansion))
        );
        let mut cfg = SchedulerConfig::expansion(5);
        assert!(cfg.validate(3).is_err());
        cfg.target_domain = Some(0);
        cfg.target_cap = 0.05;
        assert!(cfg.validate(3).is_err());
        cfg.target_cap = 0.95;
        assert!(cfg.validate(3).is_ok());
    }

    #[test]
    fn run_schedule_examples() {
        let reference = table(&[1.0, 1.0]);
        let cfg = SchedulerConfig {
            total_steps: 1,
            ..Default::default()
        };
        let s = run_schedule(
            SchedulerState::init(dist(&[0.4, 0.6])),
            [lv(1, &[2.0, 1.5])],
            &reference,
            &cfg,
        )
        .unwrap();
        assert_eq!(s.history.len(), 1);

        let cfg = SchedulerConfig::default();
        let feed: Vec<_> = (1..=4).map(|t| lv(t, &[1.0, 1.0])).collect();
        let s = run_schedule(
            SchedulerState::init(dist(&[0.4, 0.6])),
            feed,
            &reference,
            &cfg,
        )
        .unwrap();
        assert!(s
            .history
            .iter()
            .all(|r| r.proportions.weights() == [0.4, 0.6]));

        let short: Vec<_> = (1..=2).map(|t| lv(t, &[1.2, 1.0])).collect();
        assert_eq!(
            run_schedule(
                SchedulerState::init(dist(&[0.4, 0.6])),
                short,
                &reference,
                &cfg
            ),
            Err(ScheduleError::FeedbackExhausted {
                expected: 4,
                got: 2
            })
        );
    }

    #[test]
    fn run_schedule_equals_manual_loop() {
        let reference = table(&[1.0, 1.1, 0.9]);
        let cfg = SchedulerConfig::expansion(2);
        let feed = vec![
            lv(1, &[2.0, 2.1, 1.9]),
            lv(2, &[1.8, 2.2, 1.6]),
            lv(3, &[1.7, 2.0, 1.4]),
            lv(4, &[1.75, 1.9, 1.2]),
        ];
        let start = SchedulerState::init(dist(&[0.3, 0.3, 0.4]));
        let folded = run_schedule(start.clone(), feed.clone(), &reference, &cfg).unwrap();
        let mut manual = start;
        for l in &feed {
            manual.step_expansion(l, &reference, &cfg).unwrap();
        }
        assert_eq!(folded, manual);
    }

    #[test]
    fn state_serde_round_trip() {
        let mut s = SchedulerState::init(dist(&[0.5, 0.5]));
        s.step_expansion(
            &lv(1, &[2.0, 1.5]),
            &table(&[1.0, 1.0]),
            &SchedulerConfig::expansion(0),
        )
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: SchedulerState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    fn simplex(k: usize) -> impl Strategy<Value = Distribution> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|w| Distribution::normalize(&w).unwrap())
    }

    proptest! {
        #[test]
        fn every_step_preserves_the_simplex(
            start in simplex(5),
            trace in prop::collection::vec(prop::collection::vec(0.5f64..4.0, 5), 1..6),
            target in 0usize..5,
            sigma in 0.0f64..2.0,
        ) {
            let reference = table(&[1.0; 5]);
            let cfg = SchedulerConfig { sigma, total_steps: trace.len() as u64, ..SchedulerConfig::expansion(target) };
            let mut s = SchedulerState::init(start);
            for (t, l) in trace.iter().enumerate() {
                let before = s.proportions.clone();
                s.step_expansion(&lv(t as u64 + 1, l), &reference, &cfg).unwrap();
                let rec = s.last().unwrap();
                prop_assert!((s.proportions.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(s.proportions.weights().iter().zip(before.weights()).all(|(&now, &was)| now >= 0.0 && (was == 0.0 || now > 0.0)));
                if rec.gate && !rec.cap_blocked {
                    prop_assert!((s.proportions.sum() - 1.0).abs() <= 1e-12);
                    prop_assert!((s.proportions.get(target) - before.get(target) - cfg.delta).abs() <= 1e-15);
                }
            }
        }

        #[test]
        fn higher_potential_wins_for_equal_prior_share(ga in 0.0f64..0.9, gb in 0.0f64..0.9, sigma in 0.01f64..2.0) {
            prop_assume!(ga != gb);
            let mut s = SchedulerState::init(Distribution::uniform(2).unwrap());
            let cfg = SchedulerConfig { sigma, ..Default::default() };
            s.step_robustness(&losses_for_gamma(1, &[ga, gb]), &table(&[1.0, 1.0]), &cfg).unwrap();
            prop_assert_eq!(ga > gb, s.proportions.get(0) > s.proportions.get(1));
        }

        #[test]
        fn target_grows_by_delta_while_gate_stays_open(target in 0usize..4) {
            // φ stays zero (losses never rise) and γ_e stays positive.
            let reference = table(&[1.0; 4]);
            let cfg = SchedulerConfig { total_steps: 6, ..SchedulerConfig::expansion(target) };
            let mut s = SchedulerState::init(Distribution::uniform(4).unwrap());
            for t in 1..=6u64 {
                let l = 3.0 - 0.1 * t as f64;
                let before = s.proportions.get(target);
                s.step_expansion(&lv(t, &[l; 4]), &reference, &cfg).unwrap();
                let rec = s.last().unwrap();
                if rec.cap_blocked { break; }
                prop_assert!(rec.gate);
                prop_assert!((s.proportions.get(target) - before - 0.1).abs() <= 1e-15);
            }
        }
    }
}
