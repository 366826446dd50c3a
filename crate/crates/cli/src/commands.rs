use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{
    line_path, read_json, read_jsonl, read_text, slug, to_pretty, write_atomic, write_json,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use versatune_core::detector::{
    aggregate_iteration, annotate, detect, read_annotations, read_samples, DetectError,
    DetectionReport, HttpClassifier, RetryPolicy,
};
use versatune_core::mixer::{build_mix_plan, materialize};
use versatune_core::rng::derive_seed;
use versatune_core::scheduler::{run_schedule, SchedulerState, StepRecord};
use versatune_core::simulator::{
    compare_report, run_seeds, trajectories_csv, SimWorld, Strategy, Trajectory,
};
use versatune_core::{Distribution, DomainSet, LossVector};

pub const STATE_VERSION: u32 = 1;

pub const DETECTION_FILE: &str = "detection.json";
pub const STATE_FILE: &str = "state.json";
pub const HISTORY_FILE: &str = "schedule_history.jsonl";
pub const MANIFEST_DIR: &str = "manifests";
pub const SIMULATION_DIR: &str = "simulation";

fn manifest_path(out: &Path, step: u64) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("step_{step}.json"))
}

// ---------------------------------------------------------------- detect

/// Runs detection over one input file per iteration: annotation fixtures when
/// given, otherwise samples sent to the configured classifier.
pub fn cmd_detect(
    cfg: &RunConfig,
    samples: &[PathBuf],
    annotations: &[PathBuf],
) -> CliResult<DetectionReport> {
    let samples = if samples.is_empty() {
        &cfg.paths.samples[..]
    } else {
        samples
    };
    let annotations = if annotations.is_empty() {
        &cfg.paths.annotations[..]
    } else {
        annotations
    };
    let out = cfg.out();
    let mut iterations = Vec::new();
    if !annotations.is_empty() {
        for path in annotations {
            let anns = read_annotations(path, &cfg.domains)?;
            iterations.push(aggregate_iteration(&anns).map_err(|e| match e {
                DetectError::EmptyInput => {
                    CliError::Config(format!("{}: no annotations", path.display()))
                }
                e => e.into(),
            })?);
        }
    } else if !samples.is_empty() {
        let endpoint = cfg.classifier.as_ref().ok_or_else(|| {
            CliError::Config("detect needs a \"classifier\" section or --annotations".into())
        })?;
        let classifier = HttpClassifier::new(endpoint)?;
        let policy = RetryPolicy::from(endpoint);
        for (i, path) in samples.iter().enumerate() {
            let records = read_samples(path)?;
            let run = annotate(&records, &classifier, &cfg.domains, &policy)?;
            if !run.dropped.is_empty() {
                eprintln!(
                    "{}: dropped {} of {} samples",
                    path.display(),
                    run.dropped.len(),
                    run.attempted
                );
            }
            let mut body = String::new();
            for a in &run.annotations {
                body.push_str(&a.to_json(&cfg.domains).to_string());
                body.push('\n');
            }
            write_atomic(
                &out.join("annotations")
                    .join(format!("iter_{}.jsonl", i + 1)),
                body.as_bytes(),
            )?;
            iterations.push(aggregate_iteration(&run.annotations)?);
        }
    } else {
        return Err(CliError::Usage(
            "detect needs samples files or --annotations".into(),
        ));
    }
    let report = detect(&iterations)?;
    write_json(&out.join(DETECTION_FILE), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- step / run

/// On-disk scheduler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub version: u32,
    pub domains: DomainSet,
    pub state: SchedulerState,
}

fn read_state(path: &Path, domains: &DomainSet) -> CliResult<SchedulerState> {
    let corrupt =
        |msg: String| CliError::Config(format!("corrupt state file {}: {msg}", path.display()));
    let file: StateFile =
        serde_json::from_str(&read_text(path)?).map_err(|e| corrupt(e.to_string()))?;
    if file.version != STATE_VERSION {
        return Err(corrupt(format!("unsupported version {}", file.version)));
    }
    if &file.domains != domains {
        return Err(corrupt(format!(
            "domains [{}] differ from config [{}]",
            file.domains, domains
        )));
    }
    if file.state.history.len() as u64 != file.state.step {
        return Err(corrupt("history length does not match step".into()));
    }
    Ok(file.state)
}

fn detected_distribution(cfg: &RunConfig, detection: Option<&Path>) -> CliResult<Distribution> {
    let default = cfg.out().join(DETECTION_FILE);
    let path = detection
        .or(cfg.paths.detection.as_deref())
        .unwrap_or(&default);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no scheduler state and no detection report at {}",
            path.display()
        )));
    }
    let report: DetectionReport = read_json(path)?;
    report.mean.ensure_len(cfg.domains.len())?;
    Ok(report.mean)
}

/// `{"step", "proportions", "gamma", "phi", "gate", "cap_blocked"}`.
pub fn manifest_json(record: &StepRecord, domains: &DomainSet) -> Value {
    let mut m = json!({
        "step": record.step,
        "proportions": domains.to_named_map(record.proportions.weights()),
        "gamma": domains.to_named_map(record.gamma.values()),
        "phi": domains.to_named_map(record.phi.values()),
        "gate": record.gate,
        "cap_blocked": record.cap_blocked,
    });
    if let Some(adj) = &record.adjustment {
        m["adjustment"] = json!({ "alpha": adj.alpha, "beta_share": adj.beta_share });
    }
    m
}

fn initial_manifest(state: &SchedulerState, domains: &DomainSet) -> Value {
    json!({
        "step": 0,
        "proportions": domains.to_named_map(state.proportions.weights()),
    })
}

/// Persists state, the newest manifest and the full history. The state file
/// is written last so it never points past the manifests on disk.
fn persist(cfg: &RunConfig, state_path: &Path, state: &SchedulerState) -> CliResult<()> {
    let out = cfg.out();
    let manifest = match state.last() {
        Some(rec) => manifest_json(rec, &cfg.domains),
        None => initial_manifest(state, &cfg.domains),
    };
    write_json(&manifest_path(out, state.step), &manifest)?;
    let mut history = String::new();
    for rec in &state.history {
        history.push_str(&manifest_json(rec, &cfg.domains).to_string());
        history.push('\n');
    }
    write_atomic(&out.join(HISTORY_FILE), history.as_bytes())?;
    let file = StateFile {
        version: STATE_VERSION,
        domains: cfg.domains.clone(),
        state: state.clone(),
    };
    write_json(state_path, &file)
}

/// `{"step": t, "losses": {"law": .., ..}}` with exactly the configured keys.
pub fn parse_feedback(value: &Value, domains: &DomainSet) -> Result<LossVector, String> {
    let step = value
        .get("step")
        .and_then(Value::as_u64)
        .ok_or("missing integer field \"step\"")?;
    let losses = value
        .get("losses")
        .and_then(Value::as_object)
        .ok_or("missing object field \"losses\"")?;
    let losses = domains.vector_from_map(losses).map_err(|e| e.to_string())?;
    LossVector::new(step, losses).map_err(|e| e.to_string())
}

fn read_feedback(path: &Path, domains: &DomainSet) -> CliResult<Vec<LossVector>> {
    read_jsonl(path)?
        .into_iter()
        .map(|(line, v)| {
            parse_feedback(&v, domains).map_err(|message| CliError::Json {
                path: line_path(path, line),
                message,
            })
        })
        .collect()
}

pub struct StepRequest<'a> {
    pub state: Option<&'a Path>,
    pub feedback: Option<&'a Path>,
    pub line: Option<&'a str>,
    pub detection: Option<&'a Path>,
}

/// Applies one feedback line to the persisted state, initializing it from
/// the detection report when absent. Nothing is written on error.
pub fn cmd_step(cfg: &RunConfig, req: &StepRequest) -> CliResult<SchedulerState> {
    let default_state = cfg.out().join(STATE_FILE);
    let state_path = req.state.unwrap_or(&default_state);
    let config = cfg.scheduler_config()?;
    let (mut state, fresh) = if state_path.exists() {
        (read_state(state_path, &cfg.domains)?, false)
    } else {
        let init = SchedulerState::init(detected_distribution(cfg, req.detection)?);
        (init, true)
    };
    let feedback = match (req.line, req.feedback) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --line or --feedback, not both".into(),
            ))
        }
        (Some(line), None) => {
            let v: Value = serde_json::from_str(line)
                .map_err(|e| CliError::Usage(format!("--line is not JSON: {e}")))?;
            Some(parse_feedback(&v, &cfg.domains).map_err(CliError::Usage)?)
        }
        (None, Some(path)) => {
            Some(read_feedback(path, &cfg.domains)?.pop().ok_or_else(|| {
                CliError::Config(format!("{}: no feedback lines", path.display()))
            })?)
        }
        (None, None) => None,
    };
    if feedback.is_none() && !fresh {
        return Err(CliError::Usage(
            "state exists; give --line or --feedback".into(),
        ));
    }
    config.validate(state.k())?;
    let initial = fresh.then(|| initial_manifest(&state, &cfg.domains));
    if let Some(losses) = feedback {
        state.advance(&losses, &cfg.reference()?, &config)?;
    }
    if let Some(m) = initial.filter(|_| state.step > 0) {
        // The step-0 manifest is the trainer's first mix.
        write_json(&manifest_path(cfg.out(), 0), &m)?;
    }
    persist(cfg, state_path, &state)?;
    Ok(state)
}

/// Runs every step over a feedback file from a fresh state.
pub fn cmd_run(
    cfg: &RunConfig,
    feedback: Option<&Path>,
    detection: Option<&Path>,
) -> CliResult<SchedulerState> {
    let path = feedback
        .or(cfg.paths.feedback.as_deref())
        .ok_or_else(|| CliError::Usage("run needs --feedback or paths.feedback".into()))?;
    let config = cfg.scheduler_config()?;
    let reference = cfg.reference()?;
    let init = SchedulerState::init(detected_distribution(cfg, detection)?);
    config.validate(init.k())?;
    write_json(
        &manifest_path(cfg.out(), 0),
        &initial_manifest(&init, &cfg.domains),
    )?;
    let mut state = init;
    for losses in read_feedback(path, &cfg.domains)? {
        if state.step >= config.total_steps {
            break;
        }
        state.advance(&losses, &reference, &config)?;
        write_json(
            &manifest_path(cfg.out(), state.step),
            &manifest_json(state.last().expect("just advanced"), &cfg.domains),
        )?;
    }
    let state = run_schedule(state, std::iter::empty(), &reference, &config)?;
    persist(cfg, &cfg.out().join(STATE_FILE), &state)?;
    Ok(state)
}

// ---------------------------------------------------------------- mix

pub struct MixOutput {
    pub step: u64,
    pub plan_path: PathBuf,
    pub epoch_path: PathBuf,
    pub lines: usize,
}

/// Reads proportions from a manifest (`"proportions"` map) or a detection
/// report (`"mean"` vector); returns them with their step.
fn proportions_from(path: &Path, domains: &DomainSet) -> CliResult<(u64, Distribution)> {
    let v: Value = read_json(path)?;
    let bad = |m: &str| CliError::Json {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if let Some(map) = v.get("proportions").and_then(Value::as_object) {
        let step = v
            .get("step")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing \"step\""))?;
        let d = Distribution::new(domains.vector_from_map(map)?)?;
        return Ok((step, d));
    }
    if v.get("mean").is_some() {
        let report: DetectionReport = serde_json::from_value(v).map_err(|e| bad(&e.to_string()))?;
        report.mean.ensure_len(domains.len())?;
        return Ok((0, report.mean));
    }
    Err(bad(
        "expected a manifest with \"proportions\" or a detection report",
    ))
}

pub fn cmd_mix(cfg: &RunConfig, manifest: &Path, budget: Option<u64>) -> CliResult<MixOutput> {
    let (step, proportions) = proportions_from(manifest, &cfg.domains)?;
    let budget = budget.unwrap_or(cfg.budget);
    let plan = build_mix_plan(&proportions, budget, derive_seed(cfg.seed, "mix", step))?;
    let out = cfg.out();
    let epoch_path = out.join("epochs").join(format!("epoch_{step}.jsonl"));
    let plan_path = out.join("plans").join(format!("plan_step_{step}.json"));
    if let Some(parent) = epoch_path.parent() {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let tmp = epoch_path.with_extension("jsonl.partial");
    let lines = materialize(&plan, &cfg.pools()?, &cfg.domains, &tmp)?;
    std::fs::rename(&tmp, &epoch_path).map_err(CliError::io(&epoch_path))?;
    write_json(&plan_path, &plan.to_json(&cfg.domains))?;
    Ok(MixOutput {
        step,
        plan_path,
        epoch_path,
        lines,
    })
}

// ---------------------------------------------------------------- simulate

pub struct SimulateRequest<'a> {
    pub world: Option<&'a Path>,
    pub strategies: &'a [String],
    pub steps: Option<u64>,
    pub seeds: Option<u64>,
    pub noise: Option<f64>,
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyAggregate {
    pub label: String,
    pub mean_final_loss: f64,
    pub mean_rank: f64,
    pub best_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_target_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_non_target_delta_sum: Option<f64>,
}

pub struct SimulateOutput {
    pub report: Value,
    pub table: String,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Runs each strategy on each seed's world and writes trajectories plus the
/// comparison report under `<out>/simulation/`.
pub fn cmd_simulate(cfg: &RunConfig, req: &SimulateRequest) -> CliResult<SimulateOutput> {
    let domains = &cfg.domains;
    let mut world = match req.world.or(cfg.paths.world.as_deref()) {
        Some(p) => read_json::<SimWorld>(p)?,
        None if domains.len() == 6 => SimWorld::default_world(),
        None => {
            SimWorld::symmetric(domains.len()).with_noise(versatune_core::simulator::DEFAULT_NOISE)
        }
    };
    if let Some(n) = req.noise.or(cfg.simulate.noise_scale) {
        world.noise_scale = n;
    }
    world.validate()?;
    if world.k() != domains.len() {
        return Err(CliError::Config(format!(
            "world has {} domains, config has {}",
            world.k(),
            domains.len()
        )));
    }
    let labels = if req.strategies.is_empty() {
        &cfg.simulate.strategies[..]
    } else {
        req.strategies
    };
    let strategies = labels
        .iter()
        .map(|s| Strategy::parse(s, domains))
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(CliError::Usage("no strategies given".into()));
    }
    let steps = req
        .steps
        .or(cfg.simulate.steps)
        .unwrap_or(cfg.scheduler.total_steps);
    let n_seeds = req.seeds.unwrap_or(cfg.simulate.seeds).max(1);
    let seeds: Vec<u64> = (0..n_seeds)
        .map(|i| derive_seed(cfg.seed, "simulate", i))
        .collect();
    let reference = world.default_reference();
    let runs = run_seeds(
        &world,
        &strategies,
        &reference,
        steps,
        &cfg.strategy_params(),
        domains,
        &seeds,
    )?;

    let dir = cfg.out().join(SIMULATION_DIR);
    let mut per_seed = Vec::with_capacity(runs.len());
    let mut reports = Vec::with_capacity(runs.len());
    for (i, trajs) in runs.iter().enumerate() {
        for t in trajs {
            let path = dir
                .join(format!("seed_{i}"))
                .join(format!("{}.jsonl", slug(&t.label)));
            write_atomic(&path, t.to_jsonl(domains).as_bytes())?;
        }
        let rep = compare_report(trajs)?;
        per_seed.push(json!({ "seed": seeds[i], "report": rep.to_json(domains) }));
        reports.push(rep);
    }
    if req.csv || cfg.simulate.csv {
        let all: Vec<Trajectory> = runs
            .iter()
            .enumerate()
            .flat_map(|(i, trajs)| {
                trajs.iter().map(move |t| Trajectory {
                    label: format!("{}@seed_{i}", t.label),
                    ..t.clone()
                })
            })
            .collect();
        write_atomic(
            &dir.join("trajectories.csv"),
            trajectories_csv(&all, domains).as_bytes(),
        )?;
    }

    let aggregates: Vec<StrategyAggregate> = (0..strategies.len())
        .map(|s| {
            let rows = || reports.iter().map(move |r| &r.strategies[s]);
            let opt_mean = |f: fn(&versatune_core::simulator::StrategySummary) -> Option<f64>| {
                rows()
                    .map(f)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| mean(v.into_iter()))
            };
            StrategyAggregate {
                label: reports[0].strategies[s].label.clone(),
                mean_final_loss: mean(rows().map(|r| r.final_mean_loss)),
                mean_rank: mean(rows().map(|r| r.rank as f64)),
                best_count: rows().filter(|r| r.rank == 1).count(),
                mean_target_delta: opt_mean(|r| r.target_delta),
                mean_non_target_delta_sum: opt_mean(|r| r.non_target_delta_sum),
            }
        })
        .collect();
    let mut pairwise = Map::new();
    for a in 0..strategies.len() {
        for b in 0..strategies.len() {
            if a == b {
                continue;
            }
            let wins = runs
                .iter()
                .filter(|trajs| trajs[a].final_mean() < trajs[b].final_mean())
                .count();
            pairwise.insert(
                format!("{} < {}", aggregates[a].label, aggregates[b].label),
                json!(wins as f64 / runs.len() as f64),
            );
        }
    }
    let report = json!({
        "steps": steps,
        "seeds": seeds,
        "summary": aggregates,
        "pairwise_fraction_lower": pairwise,
        "per_seed": per_seed,
    });

    let mut table = format!("{} seed(s), {} step(s)\n\n", seeds.len(), steps);
    let rows: Vec<[String; 6]> = aggregates
        .iter()
        .map(|a| {
            [
                a.label.clone(),
                format!("{:.4}", a.mean_final_loss),
                format!("{:.2}", a.mean_rank),
                a.best_count.to_string(),
                a.mean_target_delta
                    .map_or("-".into(), |d| format!("{d:+.4}")),
                a.mean_non_target_delta_sum
                    .map_or("-".into(), |d| format!("{d:+.4}")),
            ]
        })
        .collect();
    let header = [
        "strategy",
        "mean_final",
        "mean_rank",
        "best",
        "target_d",
        "non_target_sum",
    ]
    .map(String::from);
    let widths: Vec<usize> = (0..6)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let w = widths[c];
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(table, "{}", cells.join("  ").trim_end());
    }
    let _ = write!(
        table,
        "\nseed {} detail:\n{}",
        seeds[0],
        reports[0].to_table(domains)
    );

    write_atomic(&dir.join("report.json"), to_pretty(&report).as_bytes())?;
    write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    Ok(SimulateOutput { report, table })
}

// ---------------------------------------------------------------- report

/// Human-readable summary of whatever artifacts exist in the output directory.
pub fn cmd_report(cfg: &RunConfig, dir: Option<&Path>) -> CliResult<String> {
    let dir = dir.unwrap_or(cfg.out());
    let domains = &cfg.domains;
    let mut out = String::new();
    let fmt_vec = |v: &[f64]| -> String {
        domains
            .names()
            .iter()
            .zip(v)
            .map(|(n, x)| format!("{n}={x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let detection = dir.join(DETECTION_FILE);
    if detection.exists() {
        let r: DetectionReport = read_json(&detection)?;
        let _ = writeln!(out, "detection ({} iteration(s))", r.per_iteration.len());
        let _ = writeln!(out, "  mean    {}", fmt_vec(r.mean.weights()));
        let _ = writeln!(out, "  stddev  {}", fmt_vec(&r.per_domain_stddev));
        let _ = writeln!(out, "  max_stddev_pct {:.4}%\n", r.max_stddev_pct);
    }

    let history = dir.join(HISTORY_FILE);
    if history.exists() {
        let _ = writeln!(out, "schedule");
        for (line, v) in read_jsonl(&history)? {
            let props = v
                .get("proportions")
                .and_then(Value::as_object)
                .ok_or_else(|| CliError::Json {
                    path: line_path(&history, line),
                    message: "missing \"proportions\"".into(),
                })?;
            let p = domains.vector_from_map(props)?;
            let _ = writeln!(
                out,
                "  step {:>3}  {}  gate={}",
                v["step"].as_u64().unwrap_or(0),
                fmt_vec(&p),
                v["gate"].as_bool().unwrap_or(false)
            );
        }
        out.push('\n');
    }

    let sim = dir.join(SIMULATION_DIR).join("report.txt");
    if sim.exists() {
        let _ = writeln!(out, "simulation");
        out.push_str(&read_text(&sim)?);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "no artifacts found in {}",
            dir.display()
        )));
    }
    Ok(out)
}
