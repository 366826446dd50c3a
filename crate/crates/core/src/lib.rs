//! Domain-proportion scheduling for supervised fine-tuning.
//!
//! The pipeline: [`detector`] estimates the base model's per-domain knowledge
//! distribution from annotated generations, [`scheduler`] adjusts per-domain
//! proportions from loss feedback, [`mixer`] turns proportions into epoch
//! datasets, and [`simulator`] provides a synthetic training world for
//! exercising the schedulers end to end.

pub mod detector;
pub mod domain;
pub mod metrics;
pub mod mixer;
pub mod rng;
pub mod scheduler;
pub mod simulator;

pub use domain::{l1_distance, DistError, Distribution, DomainSet, LossVector};
pub use metrics::{ReferenceLossTable, SignalVector};
pub use mixer::MixPlan;
pub use scheduler::{Mode, SchedulerConfig, SchedulerState, StepRecord};
pub use simulator::{SimWorld, Strategy, Trajectory};
