//! Run configuration: one JSON file with every knob, all optional.
//!
//! Relative paths inside a config file are resolved against the file's
//! directory. `--seed` and `--out` override the file.

use crate::error::{CliError, CliResult};
use crate::files::{line_path, read_json, read_jsonl};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use versatune_core::detector::ClassifierEndpointConfig;
use versatune_core::metrics::{mastery_ceiling_from_records, EpochLossRecord};
use versatune_core::mixer::{DomainPool, DEFAULT_BUDGET};
use versatune_core::scheduler::{
    Mode, SchedulerConfig, DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_SIGMA, DEFAULT_TARGET_CAP,
    DEFAULT_TOTAL_STEPS,
};
use versatune_core::simulator::StrategyParams;
use versatune_core::{DomainSet, ReferenceLossTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domains: DomainSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierEndpointConfig>,
    pub scheduler: SchedulerSection,
    /// Inline `{"law": 1.2, ..}` or a path to a JSON table or an epoch-loss JSONL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_losses: Option<ReferenceSource>,
    pub budget: u64,
    pub seed: u64,
    pub paths: PathsSection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domains: DomainSet::standard(),
            classifier: None,
            scheduler: SchedulerSection::default(),
            reference_losses: None,
            budget: DEFAULT_BUDGET,
            seed: 0,
            paths: PathsSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub mode: Mode,
    pub sigma: f64,
    pub total_steps: u64,
    pub delta: f64,
    pub epsilon: f64,
    /// Domain name (expansion mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_domain: Option<String>,
    pub target_cap: f64,
    pub bypass_gate: bool,
}

impl Default for SchedulerSection {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSource {
    Table(Map<String, Value>),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// One samples JSONL per detection iteration.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<PathBuf>,
    /// Pre-computed annotation JSONL files, one per iteration.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<PathBuf>,
    /// Domain name to pool JSONL.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub pools: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub strategies: Vec<String>,
    /// Defaults to `scheduler.total_steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    pub seeds: u64,
    /// Overrides the world's noise scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    pub csv: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            strategies: ["versatune", "uniform", "inverse", "versatune_constant"]
                .map(String::from)
                .to_vec(),
            steps: None,
            seeds: 1,
            noise_scale: None,
            csv: false,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(p: &Path, what: &str) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies command-line overrides.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let mut cfg: RunConfig = read_json(p)?;
                let base = p.parent().unwrap_or(Path::new(""));
                cfg.resolve_paths(base);
                cfg
            }
            None => {
                let mut cfg = RunConfig::default();
                cfg.paths.output_dir = PathBuf::from("out");
                cfg
            }
        };
        if cfg.paths.output_dir.as_os_str().is_empty() {
            cfg.paths.output_dir = PathBuf::from("out");
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.paths.output_dir = o.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        p.samples.iter_mut().for_each(|x| resolve(base, x));
        p.annotations.iter_mut().for_each(|x| resolve(base, x));
        p.pools.values_mut().for_each(|x| resolve(base, x));
        for x in [&mut p.detection, &mut p.feedback, &mut p.world]
            .into_iter()
            .flatten()
        {
            resolve(base, x);
        }
        if !p.output_dir.as_os_str().is_empty() {
            resolve(base, &mut p.output_dir);
        }
        if let Some(ReferenceSource::Path(x)) = &mut self.reference_losses {
            resolve(base, x);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.budget == 0 {
            return Err(CliError::Config("budget must be > 0".into()));
        }
        self.scheduler_config()?.validate(self.domains.len())?;
        if let Some(c) = &self.classifier {
            c.validate()?;
        }
        let p = &self.paths;
        for x in &p.samples {
            must_exist(x, "samples file")?;
        }
        for x in &p.annotations {
            must_exist(x, "annotations file")?;
        }
        for (name, x) in &p.pools {
            self.domains.require_index(name)?;
            must_exist(x, "pool")?;
        }
        for (x, what) in [
            (&p.detection, "detection file"),
            (&p.feedback, "feedback file"),
            (&p.world, "world file"),
        ] {
            if let Some(x) = x {
                must_exist(x, what)?;
            }
        }
        if let Some(ReferenceSource::Path(x)) = &self.reference_losses {
            must_exist(x, "reference loss file")?;
        }
        Ok(())
    }

    pub fn scheduler_config(&self) -> CliResult<SchedulerConfig> {
        let s = &self.scheduler;
        let target_domain = s
            .target_domain
            .as_deref()
            .map(|name| self.domains.require_index(name))
            .transpose()?;
        Ok(SchedulerConfig {
            mode: s.mode,
            sigma: s.sigma,
            total_steps: s.total_steps,
            delta: s.delta,
            epsilon: s.epsilon,
            target_domain,
            target_cap: s.target_cap,
            bypass_gate: s.bypass_gate,
        })
    }

    pub fn strategy_params(&self) -> StrategyParams {
        StrategyParams {
            sigma: self.scheduler.sigma,
            delta: self.scheduler.delta,
            epsilon: self.scheduler.epsilon,
            target_cap: self.scheduler.target_cap,
            ..StrategyParams::default()
        }
    }

    pub fn reference(&self) -> CliResult<ReferenceLossTable> {
        let source = self.reference_losses.as_ref().ok_or_else(|| {
            CliError::Config("reference_losses is required for scheduling".into())
        })?;
        match source {
            ReferenceSource::Table(map) => {
                Ok(ReferenceLossTable::new(self.domains.vector_from_map(map)?)?)
            }
            ReferenceSource::Path(path) if path.extension().is_some_and(|e| e == "jsonl") => {
                let records = read_jsonl(path)?
                    .into_iter()
                    .map(|(line, v)| {
                        serde_json::from_value::<EpochLossRecord>(v).map_err(|e| CliError::Json {
                            path: line_path(path, line),
                            message: e.to_string(),
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(mastery_ceiling_from_records(&records, &self.domains)?)
            }
            ReferenceSource::Path(path) => {
                let map: Map<String, Value> = read_json(path)?;
                Ok(ReferenceLossTable::new(
                    self.domains.vector_from_map(&map)?,
                )?)
            }
        }
    }

    pub fn pools(&self) -> CliResult<Vec<DomainPool>> {
        self.paths
            .pools
            .iter()
            .map(|(name, path)| {
                Ok(DomainPool {
                    domain: self.domains.require_index(name)?,
                    path: path.clone(),
                })
            })
            .collect()
    }

    pub fn out(&self) -> &Path {
        &self.paths.output_dir
    }
}
