//! Operator entry points: trajectory collection, easy-task filtering, corpus
//! analysis, simulator experiments, report rendering, and config validation.
//!
//! All verbs are batch-oriented and run to completion. Every collection-style
//! run writes a resolved config snapshot next to its outputs so the run can
//! be reproduced byte-for-byte on the simulator.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use grmfilter_core::actors::gateway::{Gateway, GatewayJudge, GatewayPolicy};
use grmfilter_core::actors::{Judge, Policy, SamplingParams};
use grmfilter_core::analyzer::{compare_reports, corpus_metrics, CorpusReport, PatternRegistry};
use grmfilter_core::dataset::{
    collect_dataset, filter_easy_tasks, read_dataset, read_tasks, write_tasks, ActorBundle,
    EnvDescriptor, OutputPaths, TaskSpec,
};
use grmfilter_core::filtering::{EngineHooks, JudgeConfig, PolicyConfig, RunConfig};
use grmfilter_core::par;
use grmfilter_core::rubrics::{load_rubrics, RubricSet};
use grmfilter_core::seeds;
use grmfilter_core::simenv::{
    make_task_spec, OracleGrm, ScriptedPolicy, ScriptedPolicyConfig, SimEnvProvider,
};
use grmfilter_core::trajectory::Strategy;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "grmfilter",
    about = "GRM-filtered trajectory collection and analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a capped dataset of accepted trajectories.
    Collect(CollectArgs),
    /// Remove tasks the policy solves in every trial.
    EasyFilter(EasyFilterArgs),
    /// Compute behavior and error metrics over dataset files.
    Analyze(AnalyzeArgs),
    /// Simulator utilities: task generation and seeded experiments.
    Sim(SimArgs),
    /// Render a comparison table from saved report files.
    Report(ReportArgs),
    /// Statically validate a run configuration.
    ValidateConfig(ValidateConfigArgs),
}

#[derive(Args)]
struct ConfigOpts {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides (e.g. --override n=5 --override policy.competence=0.8);
    /// applied after file parsing, last wins.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed; overrides the config file. Absent both places, one is
    /// drawn and printed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Task file (line-delimited JSON); overrides `tasks_file` in the config.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EasyFilterArgs {
    #[command(flatten)]
    config: ConfigOpts,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of independent trials per task (default from config, 5).
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset files to analyze; repeat for comparisons.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Column names, one per input (defaults to file stems).
    #[arg(long = "name")]
    names: Vec<String>,
    /// Pattern registry config (TOML); defaults to the shipped registry.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[command(subcommand)]
    command: SimCommand,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Generate a simulator task file.
    GenTasks(GenTasksArgs),
    /// Run baseline and the configured strategy on the same tasks and
    /// emit both datasets plus a comparison report.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenTasksArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    difficulty: u32,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigOpts,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report JSON files (from `analyze`).
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateConfigArgs {
    #[command(flatten)]
    config: ConfigOpts,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect(args) => cmd_collect(args),
        Command::EasyFilter(args) => cmd_easy_filter(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sim(args) => match args.command {
            SimCommand::GenTasks(args) => cmd_gen_tasks(args),
            SimCommand::Experiment(args) => cmd_experiment(args),
        },
        Command::Report(args) => cmd_report(args),
        Command::ValidateConfig(args) => cmd_validate_config(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not KEY=VALUE"))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{part}` is not a table"))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let leaf = parse_toml_literal(raw);
    cursor
        .as_table_mut()
        .ok_or_else(|| anyhow!("override `{key}` does not address a table"))?
        .insert(parts[parts.len() - 1].to_string(), leaf);
    Ok(())
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn load_config(opts: &ConfigOpts) -> Result<RunConfig> {
    let text = fs::read_to_string(&opts.config)
        .with_context(|| format!("reading config {}", opts.config.display()))?;
    let mut value: toml::Value = text
        .parse()
        .with_context(|| format!("parsing config {}", opts.config.display()))?;
    for spec in &opts.overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: RunConfig = value
        .try_into()
        .map_err(|e| anyhow!("config validation: {e}"))?;
    Ok(cfg)
}

fn resolve_seed(cfg: &mut RunConfig, flag: Option<u64>) -> u64 {
    let seed = flag.or(cfg.seed).unwrap_or_else(|| {
        let drawn: u64 = rand::random();
        println!("seed: {drawn} (drawn; pass --seed {drawn} to reproduce)");
        drawn
    });
    cfg.seed = Some(seed);
    seed
}

fn check_validation(cfg: &RunConfig) -> Result<()> {
    let problems = cfg.validate();
    if problems.is_empty() {
        return Ok(());
    }
    for p in &problems {
        eprintln!("config violation: {p}");
    }
    bail!("{} config violation(s)", problems.len());
}

fn build_rubrics(cfg: &RunConfig) -> Result<RubricSet> {
    match &cfg.rubric_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading rubrics {}", path.display()))?;
            load_rubrics(&text).map_err(|e| anyhow!("rubrics {}: {e}", path.display()))
        }
        None => Ok(match cfg.strategy {
            Strategy::SegmentLevel => RubricSet::default_segment(),
            _ => RubricSet::default_turn(),
        }),
    }
}

fn write_config_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg).context("serializing config snapshot")?;
    fs::write(dir.join("config_snapshot.toml"), text)?;
    Ok(())
}

fn ensure_sim_tasks(tasks: &[TaskSpec]) -> Result<()> {
    for task in tasks {
        if let EnvDescriptor::External { address } = &task.environment {
            bail!(
                "task `{}` targets external environment `{address}`; this build wires only the simulator",
                task.task_id
            );
        }
    }
    Ok(())
}

struct BuiltActors {
    policy: Box<dyn Policy>,
    judge: Box<dyn Judge>,
}

fn build_actors(
    cfg: &RunConfig,
    tasks: &[TaskSpec],
    rubrics: &RubricSet,
    outdir: &Path,
) -> Result<BuiltActors> {
    let needs_gateway = matches!(cfg.policy, PolicyConfig::Gateway { .. })
        || matches!(cfg.judge, JudgeConfig::Gateway);
    let gateway = if needs_gateway {
        let mut gw_cfg = cfg
            .gateway
            .clone()
            .ok_or_else(|| anyhow!("gateway backend selected but no [gateway] section"))?;
        if gw_cfg.audit_log.is_none() {
            gw_cfg.audit_log = Some(outdir.join("audit.jsonl"));
        }
        Some(Arc::new(Gateway::new(gw_cfg)?))
    } else {
        None
    };

    let policy: Box<dyn Policy> = match &cfg.policy {
        PolicyConfig::Scripted {
            competence,
            noise,
            temperature,
        } => Box::new(ScriptedPolicy::for_specs(
            tasks,
            ScriptedPolicyConfig {
                competence: *competence,
                noise: *noise,
            },
            SamplingParams {
                temperature: *temperature,
                ..Default::default()
            },
        )?),
        PolicyConfig::Gateway {
            temperature,
            max_response_len,
        } => Box::new(GatewayPolicy::new(
            gateway.clone().expect("gateway built above"),
            SamplingParams {
                temperature: *temperature,
                max_response_len: *max_response_len,
                ..Default::default()
            },
        )),
    };
    let judge: Box<dyn Judge> = match cfg.judge {
        JudgeConfig::Oracle => Box::new(OracleGrm::for_specs(tasks, rubrics)?),
        JudgeConfig::Gateway => Box::new(GatewayJudge::new(
            gateway.expect("gateway built above"),
            SamplingParams::default(),
        )),
    };
    Ok(BuiltActors { policy, judge })
}

fn load_tasks(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<Vec<TaskSpec>> {
    let path = flag
        .clone()
        .or_else(|| cfg.tasks_file.clone())
        .ok_or_else(|| anyhow!("no task file: pass --tasks or set tasks_file in the config"))?;
    let tasks = read_tasks(&path)?;
    if tasks.is_empty() {
        bail!("task file {} is empty", path.display());
    }
    Ok(tasks)
}

fn resolve_outdir(cfg: &RunConfig, flag: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run_collection(cfg: &RunConfig, tasks: &[TaskSpec], seed: u64, outdir: &Path) -> Result<()> {
    let rubrics = build_rubrics(cfg)?;
    ensure_sim_tasks(tasks)?;
    let actors = build_actors(cfg, tasks, &rubrics, outdir)?;
    let bundle = ActorBundle {
        policy: actors.policy.as_ref(),
        judge: actors.judge.as_ref(),
        env_provider: &SimEnvProvider,
        rubrics: &rubrics,
    };
    let paths = OutputPaths::in_dir(outdir);
    let manifest = par::with_budget(cfg.worker_budget, || {
        collect_dataset(tasks, cfg, seed, &bundle, &paths, &EngineHooks::default())
    })?;
    println!(
        "collect: strategy={} accepted={} rejected={} unevaluated={} fallback_selections={} cap={} hash={}",
        cfg.strategy,
        manifest.counts.accepted,
        manifest.counts.rejected,
        manifest.counts.unevaluated,
        manifest.counts.fallback_selections,
        manifest.cap,
        &manifest.content_hash[..16],
    );
    Ok(())
}

fn cmd_collect(args: CollectArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(tasks) = &args.tasks {
        cfg.tasks_file = Some(tasks.clone());
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    let seed = resolve_seed(&mut cfg, args.config.seed);
    check_validation(&cfg)?;
    let tasks = load_tasks(&cfg, &None)?;
    let outdir = resolve_outdir(&cfg, &None, "out")?;
    write_config_snapshot(&outdir, &cfg)?;
    run_collection(&cfg, &tasks, seed, &outdir)
}

fn cmd_easy_filter(args: EasyFilterArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(tasks) = &args.tasks {
        cfg.tasks_file = Some(tasks.clone());
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(trials) = args.trials {
        cfg.easy_filter_trials = trials;
    }
    let seed = resolve_seed(&mut cfg, args.config.seed);
    check_validation(&cfg)?;
    let tasks = load_tasks(&cfg, &None)?;
    ensure_sim_tasks(&tasks)?;
    let outdir = resolve_outdir(&cfg, &None, "out")?;
    write_config_snapshot(&outdir, &cfg)?;

    let rubrics = build_rubrics(&cfg)?;
    let actors = build_actors(&cfg, &tasks, &rubrics, &outdir)?;
    let trials = cfg.easy_filter_trials;
    let report = par::with_budget(cfg.worker_budget, || {
        filter_easy_tasks(
            &tasks,
            actors.policy.as_ref(),
            &SimEnvProvider,
            trials,
            &cfg,
            seed,
        )
    })?;
    write_tasks(&outdir.join("survivors.jsonl"), &report.survivors)?;
    let mut log = fs::File::create(outdir.join("trial_log.jsonl"))?;
    for entry in &report.log {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    println!(
        "easy-filter: trials={} kept={} removed={}",
        trials,
        report.survivors.len(),
        tasks.len() - report.survivors.len()
    );
    if report.survivors.is_empty() {
        eprintln!("warning: no tasks survived the easy filter");
    }
    Ok(())
}

fn load_registry(path: &Option<PathBuf>) -> Result<PatternRegistry> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading registry {}", p.display()))?;
            PatternRegistry::from_toml(&text).map_err(|e| anyhow!("registry {}: {e}", p.display()))
        }
        None => Ok(PatternRegistry::default_registry()),
    }
}

fn column_names(inputs: &[PathBuf], names: &[String]) -> Result<Vec<String>> {
    if !names.is_empty() {
        if names.len() != inputs.len() {
            bail!(
                "{} --name value(s) for {} input(s)",
                names.len(),
                inputs.len()
            );
        }
        return Ok(names.to_vec());
    }
    Ok(inputs
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let registry = load_registry(&args.registry)?;
    let names = column_names(&args.inputs, &args.names)?;
    fs::create_dir_all(&args.out)?;

    let mut named_reports: Vec<(String, CorpusReport)> = Vec::new();
    for (path, name) in args.inputs.iter().zip(&names) {
        let corpus = read_dataset(path)?;
        let report = corpus_metrics(&corpus, &registry)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        fs::write(
            args.out.join(format!("report_{name}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        named_reports.push((name.clone(), report));
    }
    let table = compare_reports(&named_reports);
    let text = table.render_text();
    fs::write(args.out.join("table.txt"), &text)?;
    fs::write(
        args.out.join("table.json"),
        serde_json::to_string_pretty(&table)?,
    )?;
    fs::write(
        args.out.join("invocation.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "verb": "analyze",
            "inputs": args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "names": names,
            "registry": args.registry.as_ref().map(|p| p.display().to_string()),
        }))?,
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_gen_tasks(args: GenTasksArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be >= 1");
    }
    let seed = args.seed.unwrap_or_else(|| {
        let drawn: u64 = rand::random();
        println!("seed: {drawn} (drawn; pass --seed {drawn} to reproduce)");
        drawn
    });
    let tasks: Vec<TaskSpec> = (0..args.count)
        .map(|i| make_task_spec(seeds::derive(seed, i as u64), args.difficulty))
        .collect();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_tasks(&args.out, &tasks)?;
    println!(
        "sim gen-tasks: wrote {} task(s) (difficulty {}) to {}",
        tasks.len(),
        args.difficulty,
        args.out.display()
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(tasks) = &args.tasks {
        cfg.tasks_file = Some(tasks.clone());
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    let seed = resolve_seed(&mut cfg, args.config.seed);
    check_validation(&cfg)?;
    if cfg.strategy == Strategy::Baseline {
        bail!("experiment compares a filtering strategy against baseline; set strategy to turn_level or segment_level");
    }
    let tasks = load_tasks(&cfg, &None)?;
    ensure_sim_tasks(&tasks)?;
    let outdir = resolve_outdir(&cfg, &None, "out")?;
    write_config_snapshot(&outdir, &cfg)?;

    let mut baseline_cfg = cfg.clone();
    baseline_cfg.strategy = Strategy::Baseline;
    baseline_cfg.n = 1;
    baseline_cfg.l = None;

    let baseline_dir = outdir.join("baseline");
    let filtered_dir = outdir.join("filtered");
    fs::create_dir_all(&baseline_dir)?;
    fs::create_dir_all(&filtered_dir)?;
    run_collection(&baseline_cfg, &tasks, seed, &baseline_dir)?;
    run_collection(&cfg, &tasks, seed, &filtered_dir)?;

    let registry = PatternRegistry::default_registry();
    let mut named = Vec::new();
    for (name, dir) in [("baseline", &baseline_dir), ("filtered", &filtered_dir)] {
        let corpus = read_dataset(&OutputPaths::in_dir(dir).dataset)?;
        if corpus.is_empty() {
            eprintln!("warning: {name} accepted no trajectories; comparison skipped");
            return Ok(());
        }
        let report = corpus_metrics(&corpus, &registry).map_err(|e| anyhow!("{name}: {e}"))?;
        fs::write(
            outdir.join(format!("report_{name}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        named.push((name.to_string(), report));
    }
    let table = compare_reports(&named);
    let text = table.render_text();
    fs::write(outdir.join("comparison.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let names = column_names(&args.inputs, &[])?;
    let mut named = Vec::new();
    for (path, name) in args.inputs.iter().zip(names) {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        let report: CorpusReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing report {}", path.display()))?;
        named.push((name, report));
    }
    let table = compare_reports(&named);
    let text = table.render_text();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&args.out, &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_validate_config(args: ValidateConfigArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut problems = cfg.validate();
    // Rubric weights are part of static validation when a file is named.
    if cfg.rubric_file.is_some() {
        if let Err(e) = build_rubrics(&cfg) {
            problems.push(format!("rubrics: {e}"));
        }
    }
    // Capability requirements need the task file when present.
    if let Some(tasks_file) = &cfg.tasks_file {
        match read_tasks(tasks_file) {
            Ok(tasks) => {
                if let Err(e) = ensure_sim_tasks(&tasks) {
                    problems.push(format!("tasks: {e}"));
                }
            }
            Err(e) => problems.push(format!("tasks: {e}")),
        }
    }
    if problems.is_empty() {
        println!("config ok: {}", args.config.config.display());
        return Ok(());
    }
    for p in &problems {
        eprintln!("config violation: {p}");
    }
    bail!("{} config violation(s)", problems.len());
}
