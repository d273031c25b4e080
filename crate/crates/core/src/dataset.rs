//! End-to-end collection: easy-task pre-filter, capped accepted-trajectory
//! dataset assembly, quarantine logs, and persistence.
//!
//! The dataset file holds only accepted records (terminal reward 1). Rejected
//! and unevaluated trajectories go to separate quarantine files and never mix
//! into the dataset. Collection workers run per task; the writer is a single
//! serialized appender fed in deterministic task order, so reruns with equal
//! config and seed are byte-identical.

use crate::actors::gateway::sha256_hex;
use crate::actors::{ActorError, Environment, Judge, Policy};
use crate::filtering::{
    accept, rollout, rollout_baseline, EngineHooks, PipelineError, RunConfig,
};
use crate::rubrics::{RubricSet, SideInfo};
use crate::seeds::{self, stream};
use crate::trajectory::{Strategy, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// System prompt handed to the agent ahead of the task statement.
pub const AGENT_PROMPT: &str = include_str!("../assets/agent_prompt.txt");

/// Where a task's environment lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDescriptor {
    Sim { seed: u64, difficulty: u32 },
    External { address: String },
}

/// One collectible task: statement, judge-side references, environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub task_statement: String,
    pub side: SideInfo,
    pub environment: EnvDescriptor,
}

impl TaskSpec {
    /// The agent's initial state text: system prompt plus task statement.
    pub fn initial_prompt(&self) -> String {
        format!("{}\n## Task\n{}", AGENT_PROMPT, self.task_statement)
    }
}

/// Builds a fresh environment for a task. Implementations must hand out
/// single-owner instances; concurrent rollouts hold one each.
pub trait EnvProvider: Send + Sync {
    fn make_env(&self, task: &TaskSpec) -> Result<Box<dyn Environment>, ActorError>;
}

/// The wired actor set for a collection run.
pub struct ActorBundle<'a> {
    pub policy: &'a dyn Policy,
    pub judge: &'a dyn Judge,
    pub env_provider: &'a dyn EnvProvider,
    pub rubrics: &'a RubricSet,
}

/// Output file layout of one collection run.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub dataset: PathBuf,
    pub rejected: PathBuf,
    pub unevaluated: PathBuf,
    pub manifest: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            dataset: dir.join("dataset.jsonl"),
            rejected: dir.join("rejected.jsonl"),
            unevaluated: dir.join("unevaluated.jsonl"),
            manifest: dir.join("manifest.json"),
        }
    }
}

/// Exact outcome counts of a collection run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub tasks_attempted: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unevaluated: usize,
    pub fallback_selections: usize,
}

/// Manifest finalizing a collection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_file: String,
    pub cap: usize,
    pub counts: DatasetCounts,
    pub seed: u64,
    pub config: RunConfig,
    pub content_hash: String,
    pub finalized: bool,
}

/// One quarantined outcome (rejection reasons live in the trajectory itself;
/// unevaluated records carry the failure reason).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub task_id: String,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory: Option<Trajectory>,
}

/// Write task specs as one JSON record per line.
pub fn write_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<(), PipelineError> {
    let mut file = BufWriter::new(fs::File::create(path)?);
    for task in tasks {
        let line = serde_json::to_string(task)
            .map_err(|e| PipelineError::Config(format!("task serialization: {e}")))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

/// Read a line-delimited task file; parse failures name the line.
pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskSpec = serde_json::from_str(line).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(task.task_id.clone()) {
            return Err(PipelineError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("duplicate task_id `{}`", task.task_id),
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// Read a line-delimited trajectory dataset; parse failures name the line.
pub fn read_dataset(path: &Path) -> Result<Vec<Trajectory>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let traj = Trajectory::from_json_line(line).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(traj);
    }
    Ok(out)
}

/// Hash a finalized dataset file.
pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Verify a dataset file against its manifest hash.
pub fn verify_dataset(path: &Path, manifest: &DatasetManifest) -> Result<(), PipelineError> {
    let actual = hash_file(path)?;
    if actual != manifest.content_hash {
        return Err(PipelineError::Integrity {
            expected: manifest.content_hash.clone(),
            actual,
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, PipelineError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })
}

/// Per-task trial outcomes from the easy-task filter. `None` marks an
/// unevaluated trial (actor abort or reward-harness failure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialLog {
    pub task_id: String,
    pub outcomes: Vec<Option<u8>>,
    pub kept: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Easy-filter result: surviving tasks plus the full trial log.
#[derive(Debug, Clone)]
pub struct EasyFilterReport {
    pub survivors: Vec<TaskSpec>,
    pub log: Vec<TrialLog>,
}

/// Remove tasks the policy solves in every one of `trials` independent
/// baseline rollouts. Aborted tasks are kept ("unevaluated-kept") and noted.
pub fn filter_easy_tasks(
    tasks: &[TaskSpec],
    policy: &dyn Policy,
    env_provider: &dyn EnvProvider,
    trials: usize,
    cfg: &RunConfig,
    run_seed: u64,
) -> Result<EasyFilterReport, PipelineError> {
    if trials < 1 {
        return Err(PipelineError::Config("trials must be >= 1".to_string()));
    }
    let baseline_cfg = RunConfig {
        strategy: Strategy::Baseline,
        n: 1,
        l: None,
        ..cfg.clone()
    };
    let logs: Vec<TrialLog> = crate::par::map_ref(tasks, |task| {
        let task_seed = seeds::for_task(run_seed, &task.task_id);
        let mut outcomes = Vec::with_capacity(trials);
        let mut note = None;
        for trial in 0..trials {
            let trial_seed = seeds::derive_path(task_seed, &[stream::TRIAL, trial as u64]);
            let outcome = env_provider
                .make_env(task)
                .map_err(PipelineError::from)
                .and_then(|env| rollout_baseline(task, policy, env, &baseline_cfg, trial_seed));
            match outcome {
                Ok(traj) => outcomes.push(traj.terminal_reward),
                Err(e) => {
                    outcomes.push(None);
                    note = Some(format!("trial {trial}: {e}"));
                }
            }
        }
        let solved_all = outcomes.iter().all(|o| *o == Some(1));
        TrialLog {
            task_id: task.task_id.clone(),
            outcomes,
            kept: !solved_all,
            note,
        }
    });
    let survivors = tasks
        .iter()
        .zip(&logs)
        .filter(|(_, log)| log.kept)
        .map(|(task, _)| task.clone())
        .collect();
    Ok(EasyFilterReport {
        survivors,
        log: logs,
    })
}

struct Writers {
    dataset: BufWriter<fs::File>,
    rejected: BufWriter<fs::File>,
    unevaluated: BufWriter<fs::File>,
}

impl Writers {
    fn open(paths: &OutputPaths) -> Result<Self, PipelineError> {
        Ok(Writers {
            dataset: BufWriter::new(fs::File::create(&paths.dataset)?),
            rejected: BufWriter::new(fs::File::create(&paths.rejected)?),
            unevaluated: BufWriter::new(fs::File::create(&paths.unevaluated)?),
        })
    }

    fn flush(&mut self) -> Result<(), PipelineError> {
        self.dataset.flush()?;
        self.rejected.flush()?;
        self.unevaluated.flush()?;
        Ok(())
    }
}

/// Run the configured strategy over `tasks`, appending accepted trajectories
/// until the cap is reached or passes are exhausted. Returns the finalized
/// manifest; quarantine files receive rejected and unevaluated outcomes.
pub fn collect_dataset(
    tasks: &[TaskSpec],
    cfg: &RunConfig,
    run_seed: u64,
    actors: &ActorBundle<'_>,
    paths: &OutputPaths,
    hooks: &EngineHooks,
) -> Result<DatasetManifest, PipelineError> {
    if tasks.is_empty() {
        return Err(PipelineError::Config("task list is empty".to_string()));
    }
    if cfg.cap == 0 {
        return Err(PipelineError::Config("cap must be >= 1".to_string()));
    }
    if !cfg.allow_patch_free {
        if let Some(task) = tasks.iter().find(|t| t.side.ground_truth_patch.is_empty()) {
            return Err(PipelineError::Config(format!(
                "task `{}` has an empty ground-truth patch and allow_patch_free is false",
                task.task_id
            )));
        }
    }
    // Capability negotiation happens before any rollout starts.
    if cfg.strategy == Strategy::SegmentLevel {
        let probe = actors.env_provider.make_env(&tasks[0])?;
        if !probe.supports_snapshot() {
            return Err(ActorError::SnapshotUnsupported.into());
        }
    }

    let mut writers = Writers::open(paths)?;
    let mut counts = DatasetCounts::default();
    let mut accepted_ids: HashSet<String> = HashSet::new();

    'passes: for pass in 0..cfg.max_passes {
        if counts.accepted >= cfg.cap {
            break;
        }
        let pass_seed = seeds::derive_path(run_seed, &[stream::PASS, pass as u64]);
        let pending: Vec<&TaskSpec> = tasks
            .iter()
            .filter(|t| !accepted_ids.contains(&t.task_id))
            .collect();
        if pending.is_empty() {
            break;
        }
        let results: Vec<Result<Trajectory, PipelineError>> =
            crate::par::map_ref(&pending, |task| {
                let env = actors.env_provider.make_env(task)?;
                let seed = seeds::for_task(pass_seed, &task.task_id);
                rollout(
                    task,
                    actors.policy,
                    env,
                    actors.judge,
                    actors.rubrics,
                    cfg,
                    seed,
                    hooks,
                )
            });
        for (task, result) in pending.iter().zip(results) {
            counts.tasks_attempted += 1;
            match result {
                Err(e) => {
                    counts.unevaluated += 1;
                    let record = QuarantineRecord {
                        task_id: task.task_id.clone(),
                        reason: format!("rollout aborted: {e}"),
                        trajectory: None,
                    };
                    writeln!(
                        writers.unevaluated,
                        "{}",
                        serde_json::to_string(&record)
                            .map_err(|e| PipelineError::Config(e.to_string()))?
                    )?;
                }
                Ok(traj) => {
                    counts.fallback_selections += traj.provenance.fallback_count();
                    if traj.terminal_reward.is_none() {
                        counts.unevaluated += 1;
                        let reason = traj
                            .provenance
                            .reward_error
                            .clone()
                            .unwrap_or_else(|| "reward harness failure".to_string());
                        let record = QuarantineRecord {
                            task_id: task.task_id.clone(),
                            reason,
                            trajectory: Some(traj),
                        };
                        writeln!(
                            writers.unevaluated,
                            "{}",
                            serde_json::to_string(&record)
                                .map_err(|e| PipelineError::Config(e.to_string()))?
                        )?;
                    } else if accept(&traj)? {
                        counts.accepted += 1;
                        accepted_ids.insert(task.task_id.clone());
                        writeln!(writers.dataset, "{}", traj.to_json_line())?;
                        if counts.accepted >= cfg.cap {
                            break 'passes;
                        }
                    } else {
                        counts.rejected += 1;
                        writeln!(writers.rejected, "{}", traj.to_json_line())?;
                    }
                }
            }
        }
    }

    writers.flush()?;
    drop(writers);

    let content_hash = hash_file(&paths.dataset)?;
    let manifest = DatasetManifest {
        dataset_file: paths
            .dataset
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| paths.dataset.display().to_string()),
        cap: cfg.cap,
        counts,
        seed: run_seed,
        config: cfg.clone(),
        content_hash,
        finalized: true,
    };
    // Atomic finalization: temp write, then rename.
    let tmp = paths.manifest.with_extension("json.tmp");
    fs::write(
        &tmp,
        serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Config(e.to_string()))?,
    )?;
    fs::rename(&tmp, &paths.manifest)?;
    Ok(manifest)
}
