//! Rollout engines: the plain baseline, turn-level GRM-filtered sampling,
//! and segment-level GRM-filtered sampling with branched environments.
//!
//! Turn-level selection judges N unexecuted candidate actions per step; the
//! judge never sees execution results for the candidate step. Segment-level
//! rolls N executed continuations per block on snapshot branches, selects
//! non-final blocks by pairwise tournament, and the final block purely by
//! terminal reward (no GRM call). Every selection is recorded in provenance.

use crate::actors::{ActorError, Environment, Judge, JudgeQuery, Policy};
use crate::actors::gateway::GatewayConfig;
use crate::dataset::TaskSpec;
use crate::rubrics::{
    assemble_pair_prompt, assemble_turn_prompt, parse_pair_verdict, parse_turn_verdict,
    select_turn_winner, RubricError, RubricSet,
};
use crate::seeds::{self, stream};
use crate::simenv::{NoiseWeights, ScriptedPolicyConfig};
use crate::trajectory::{
    PairOutcome, Provenance, State, Step, Strategy, Trajectory, TrajectoryError, VerdictRecord,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Errors that abort a task rollout or a pipeline run.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("actor contract violation: {0}")]
    Contract(String),
    #[error("trajectory for task `{0}` carries no terminal reward")]
    MissingReward(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("dataset integrity failure: manifest hash {expected} but file hashes to {actual}")]
    Integrity { expected: String, actual: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// What to do after judge retries are exhausted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Seeded uniform-random selection; locally equal to the no-GRM baseline.
    #[default]
    UniformRandom,
}

/// Agent policy backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Scripted {
        competence: f64,
        #[serde(default)]
        noise: NoiseWeights,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Gateway {
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_max_response_len")]
        max_response_len: usize,
    },
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_response_len() -> usize {
    4096
}

/// Judge backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeConfig {
    Oracle,
    Gateway,
}

/// Full run configuration; also the on-disk config file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default = "default_t")]
    pub t: usize,
    /// Root seed; drawn (and printed) at startup when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// 0 means the default worker pool.
    #[serde(default)]
    pub worker_budget: usize,
    #[serde(default = "default_judge_retries")]
    pub judge_retries: usize,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    #[serde(default)]
    pub fallback_policy: FallbackPolicy,
    #[serde(default = "default_trials")]
    pub easy_filter_trials: usize,
    #[serde(default)]
    pub allow_patch_free: bool,
    #[serde(default)]
    pub rubric_file: Option<PathBuf>,
    #[serde(default)]
    pub tasks_file: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    // Tables last so the TOML serializer accepts the struct order.
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
    #[serde(default = "default_judge")]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub gateway: Option<GatewayConfig>,
}

fn default_n() -> usize {
    1
}
fn default_t() -> usize {
    20
}
fn default_cap() -> usize {
    500
}
fn default_judge_retries() -> usize {
    2
}
fn default_max_passes() -> usize {
    1
}
fn default_trials() -> usize {
    5
}
fn default_policy() -> PolicyConfig {
    PolicyConfig::Scripted {
        competence: 0.6,
        noise: NoiseWeights::default(),
        temperature: 1.0,
    }
}
fn default_judge() -> JudgeConfig {
    JudgeConfig::Oracle
}

impl RunConfig {
    pub fn new(strategy: Strategy, n: usize, l: Option<usize>, t: usize) -> Self {
        RunConfig {
            strategy,
            n,
            l,
            t,
            seed: Some(0),
            cap: default_cap(),
            worker_budget: 0,
            judge_retries: default_judge_retries(),
            max_passes: default_max_passes(),
            fallback_policy: FallbackPolicy::default(),
            easy_filter_trials: default_trials(),
            allow_patch_free: false,
            rubric_file: None,
            tasks_file: None,
            output_dir: None,
            policy: default_policy(),
            judge: default_judge(),
            gateway: None,
        }
    }

    /// Static validation; returns every violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.t < 1 {
            problems.push("t (horizon) must be >= 1".to_string());
        }
        if self.cap < 1 {
            problems.push("cap must be >= 1".to_string());
        }
        if self.max_passes < 1 {
            problems.push("max_passes must be >= 1".to_string());
        }
        if self.easy_filter_trials < 1 {
            problems.push("easy_filter_trials must be >= 1".to_string());
        }
        match self.strategy {
            Strategy::Baseline => {}
            Strategy::TurnLevel => {
                if self.n < 2 {
                    problems.push(format!(
                        "turn_level filtering requires n >= 2, got {}",
                        self.n
                    ));
                }
                if self.l.is_some() {
                    problems.push("l is only meaningful for segment_level".to_string());
                }
            }
            Strategy::SegmentLevel => {
                if self.n < 2 {
                    problems.push(format!(
                        "segment_level filtering requires n >= 2, got {}",
                        self.n
                    ));
                }
                match self.l {
                    None => problems.push("segment_level requires l".to_string()),
                    Some(l) if l < 1 || l > self.t => problems.push(format!(
                        "segment length l={l} must satisfy 1 <= l <= t={}",
                        self.t
                    )),
                    Some(_) => {}
                }
            }
        }
        match &self.policy {
            PolicyConfig::Scripted {
                competence,
                noise,
                temperature,
            } => {
                let cfg = ScriptedPolicyConfig {
                    competence: *competence,
                    noise: *noise,
                };
                if let Err(e) = cfg.validate() {
                    problems.push(format!("policy: {e}"));
                }
                if *temperature < 0.0 {
                    problems.push(format!("policy: temperature must be >= 0, got {temperature}"));
                }
            }
            PolicyConfig::Gateway { temperature, .. } => {
                if *temperature < 0.0 {
                    problems.push(format!("policy: temperature must be >= 0, got {temperature}"));
                }
                if self.gateway.is_none() {
                    problems.push("policy kind `gateway` requires a [gateway] section".to_string());
                }
            }
        }
        if matches!(self.judge, JudgeConfig::Gateway) && self.gateway.is_none() {
            problems.push("judge kind `gateway` requires a [gateway] section".to_string());
        }
        problems
    }
}

/// Which prompt a [`PromptEvent`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Turn,
    Pair,
}

/// One assembled judge prompt, observable through [`EngineHooks`].
#[derive(Debug, Clone)]
pub struct PromptEvent {
    pub kind: PromptKind,
    /// Step index for turn prompts, block index for pair prompts.
    pub index: usize,
    pub text: String,
}

/// Optional engine observers; the default is inert.
#[derive(Default, Clone)]
pub struct EngineHooks {
    pub prompt_sink: Option<Arc<dyn Fn(PromptEvent) + Send + Sync>>,
}

impl EngineHooks {
    pub fn capture_prompts(buffer: Arc<Mutex<Vec<PromptEvent>>>) -> Self {
        EngineHooks {
            prompt_sink: Some(Arc::new(move |event| {
                buffer.lock().expect("prompt buffer").push(event);
            })),
        }
    }

    fn emit(&self, kind: PromptKind, index: usize, text: &str) {
        if let Some(sink) = &self.prompt_sink {
            sink(PromptEvent {
                kind,
                index,
                text: text.to_string(),
            });
        }
    }
}

/// Uniform partition of horizon `t` into ceil(t/l) blocks of length
/// `min(l, t - b*l)`.
pub fn partition_horizon(t: usize, l: usize) -> Result<Vec<usize>, PipelineError> {
    if l < 1 || l > t {
        return Err(PipelineError::Config(format!(
            "segment length l={l} must satisfy 1 <= l <= t={t}"
        )));
    }
    let blocks = t.div_ceil(l);
    Ok((0..blocks).map(|b| l.min(t - b * l)).collect())
}

/// Accept iff the terminal reward is exactly 1. A missing reward is an
/// error: unevaluated trajectories are never silently accepted or rejected.
pub fn accept(trajectory: &Trajectory) -> Result<bool, PipelineError> {
    match trajectory.terminal_reward {
        Some(r) => Ok(r == 1),
        None => Err(PipelineError::MissingReward(trajectory.task_id.clone())),
    }
}

/// A branched multi-step continuation rolled out from a shared prefix.
#[derive(Debug)]
pub struct SegmentCandidate {
    pub steps: Vec<Step>,
    pub branch_snapshot: crate::actors::SnapshotHandle,
    pub terminated_early: bool,
}

struct BranchOutcome {
    candidate: SegmentCandidate,
    end_state: State,
    env: Box<dyn Environment>,
}

fn take_single(actions: Vec<crate::trajectory::Action>) -> Result<crate::trajectory::Action, PipelineError> {
    let mut actions = actions;
    match (actions.len(), actions.pop()) {
        (1, Some(action)) => Ok(action),
        (len, _) => Err(PipelineError::Contract(format!(
            "policy returned {len} candidates, expected 1"
        ))),
    }
}

fn attach_reward(
    mut trajectory: Trajectory,
    preset: Option<u8>,
    env: &dyn Environment,
) -> Result<Trajectory, PipelineError> {
    if let Some(r) = preset {
        return Ok(trajectory.with_reward(r)?);
    }
    match env.terminal_reward(&trajectory) {
        Ok(outcome) => Ok(trajectory.with_reward(outcome.value)?),
        Err(e) => {
            // Reward-harness failure is not a rollout abort: the trajectory
            // survives unevaluated and is quarantined by the caller.
            trajectory.provenance.reward_error = Some(e.to_string());
            Ok(trajectory)
        }
    }
}

/// Plain policy rollout to termination, padded, with terminal reward.
pub fn rollout_baseline(
    task: &TaskSpec,
    policy: &dyn Policy,
    mut env: Box<dyn Environment>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Trajectory, PipelineError> {
    let mut state = State::new(&task.task_id, task.initial_prompt());
    while !state.is_terminal(cfg.t) {
        let step_idx = state.history().len();
        let sample_seed = seeds::derive_path(seed, &[stream::STEP, step_idx as u64]);
        let action = take_single(policy.sample_candidates(&state, 1, sample_seed)?)?;
        let observation = env.execute(&state, &action)?;
        state = state.transition(action, observation)?;
    }
    let provenance = Provenance::new(Strategy::Baseline, 1, None, seed);
    let trajectory = Trajectory::from_partial(
        &task.task_id,
        task.initial_prompt(),
        state.history(),
        cfg.t,
        provenance,
    )?;
    attach_reward(trajectory, None, env.as_ref())
}

struct TurnSelection {
    winner: usize,
    fallback: bool,
    contradiction: bool,
    judge_raw: Option<String>,
}

fn judged_turn_selection(
    judge: &dyn Judge,
    prompt: &str,
    state: &State,
    candidates: &[crate::trajectory::Action],
    retries: usize,
    fallback_seed: u64,
) -> Result<TurnSelection, PipelineError> {
    let query = JudgeQuery::Turn {
        prompt,
        state,
        candidates,
    };
    for _attempt in 0..=retries {
        let raw = judge.judge(&query)?;
        match parse_turn_verdict(&raw, candidates.len()) {
            Ok(verdict) => {
                // The conclusion line is authoritative; a stated-total
                // contradiction is recorded, not resolved.
                let contradiction = verdict
                    .weighted_totals
                    .as_ref()
                    .is_some_and(|totals| select_turn_winner(totals) != verdict.selected());
                return Ok(TurnSelection {
                    winner: verdict.selected(),
                    fallback: false,
                    contradiction,
                    judge_raw: Some(raw),
                });
            }
            Err(RubricError::UnparseableVerdict | RubricError::WinnerOutOfRange { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let winner = seeds::rng(fallback_seed).gen_range(0..candidates.len());
    Ok(TurnSelection {
        winner,
        fallback: true,
        contradiction: false,
        judge_raw: None,
    })
}

/// Turn-level GRM-filtered rollout: at every step N candidates are sampled
/// from the same state, the judge picks one before anything executes, and
/// the rest are discarded.
pub fn rollout_turn_level(
    task: &TaskSpec,
    policy: &dyn Policy,
    mut env: Box<dyn Environment>,
    judge: &dyn Judge,
    rubrics: &RubricSet,
    cfg: &RunConfig,
    seed: u64,
    hooks: &EngineHooks,
) -> Result<Trajectory, PipelineError> {
    let n = cfg.n.max(1);
    let mut provenance = Provenance::new(Strategy::TurnLevel, n, None, seed);
    let mut state = State::new(&task.task_id, task.initial_prompt());
    while !state.is_terminal(cfg.t) {
        let step_idx = state.history().len();
        let sample_seed = seeds::derive_path(seed, &[stream::STEP, step_idx as u64]);
        let candidates = policy.sample_candidates(&state, n, sample_seed)?;
        if candidates.len() != n {
            return Err(PipelineError::Contract(format!(
                "policy returned {} candidates, expected {n}",
                candidates.len()
            )));
        }
        let selection = if n == 1 {
            TurnSelection {
                winner: 0,
                fallback: false,
                contradiction: false,
                judge_raw: None,
            }
        } else {
            let prompt = assemble_turn_prompt(&state, &candidates, &task.side, rubrics)?;
            hooks.emit(PromptKind::Turn, step_idx, &prompt);
            judged_turn_selection(
                judge,
                &prompt,
                &state,
                &candidates,
                cfg.judge_retries,
                seeds::derive_path(seed, &[stream::FALLBACK, step_idx as u64]),
            )?
        };
        provenance.verdicts.push(VerdictRecord::Turn {
            step: step_idx,
            candidates: candidates.iter().map(|c| c.raw_text.clone()).collect(),
            winner: selection.winner,
            fallback: selection.fallback,
            contradiction: selection.contradiction,
            judge_raw: selection.judge_raw,
        });
        let action = candidates
            .into_iter()
            .nth(selection.winner)
            .expect("winner index validated");
        let observation = env.execute(&state, &action)?;
        state = state.transition(action, observation)?;
    }
    let trajectory = Trajectory::from_partial(
        &task.task_id,
        task.initial_prompt(),
        state.history(),
        cfg.t,
        provenance,
    )?;
    attach_reward(trajectory, None, env.as_ref())
}

fn roll_branch(
    task: &TaskSpec,
    policy: &dyn Policy,
    mut env: Box<dyn Environment>,
    mut state: State,
    block_len: usize,
    horizon: usize,
    branch_seed: u64,
) -> Result<BranchOutcome, PipelineError> {
    let _ = task;
    let mut steps = Vec::new();
    let mut terminated_early = false;
    for offset in 0..block_len {
        if state.is_terminal(horizon) {
            break;
        }
        let sample_seed = seeds::derive_path(branch_seed, &[stream::STEP, offset as u64]);
        let action = take_single(policy.sample_candidates(&state, 1, sample_seed)?)?;
        let observation = env.execute(&state, &action)?;
        let finished = action.is_finish();
        state = state.transition(action.clone(), observation.clone())?;
        steps.push(Step::new(action, observation));
        if finished {
            terminated_early = true;
            break;
        }
    }
    let branch_snapshot = env.snapshot()?;
    Ok(BranchOutcome {
        candidate: SegmentCandidate {
            steps,
            branch_snapshot,
            terminated_early,
        },
        end_state: state,
        env,
    })
}

fn judged_pair(
    judge: &dyn Judge,
    prompt: &str,
    prefix: &State,
    first: &[Step],
    second: &[Step],
    retries: usize,
    fallback_seed: u64,
) -> Result<(bool, bool), PipelineError> {
    let query = JudgeQuery::Pair {
        prompt,
        prefix,
        first,
        second,
    };
    for _attempt in 0..=retries {
        let raw = judge.judge(&query)?;
        if let Ok(verdict) = parse_pair_verdict(&raw) {
            return Ok((verdict.first_wins, false));
        }
    }
    Ok((seeds::rng(fallback_seed).gen::<bool>(), true))
}

/// Segment-level GRM-filtered rollout over snapshot-branched continuations.
///
/// For every non-final block the winner comes from a pairwise tournament
/// over executed segments; the final block completes every branch to
/// termination and picks the max-reward branch (seeded-random when all
/// rewards are 0) with no GRM call. Mainline adoption takes the branch
/// directly on deterministic environments and re-executes the selected
/// actions (recording re-executed observations, flagging divergence) on
/// nondeterministic ones.
pub fn rollout_segment_level(
    task: &TaskSpec,
    policy: &dyn Policy,
    env: Box<dyn Environment>,
    judge: &dyn Judge,
    rubrics: &RubricSet,
    cfg: &RunConfig,
    seed: u64,
    hooks: &EngineHooks,
) -> Result<Trajectory, PipelineError> {
    if !env.supports_snapshot() {
        return Err(ActorError::SnapshotUnsupported.into());
    }
    let l = cfg
        .l
        .ok_or_else(|| PipelineError::Config("segment_level requires l".to_string()))?;
    let blocks = partition_horizon(cfg.t, l)?;
    let n = cfg.n.max(1);
    let mut provenance = Provenance::new(Strategy::SegmentLevel, n, Some(l), seed);
    let mut mainline = env;
    let mut state = State::new(&task.task_id, task.initial_prompt());
    let mut preset_reward: Option<u8> = None;
    let last_block = blocks.len() - 1;

    for (block_idx, block_len) in blocks.iter().copied().enumerate() {
        if state.is_terminal(cfg.t) {
            break;
        }
        let snap = mainline.snapshot()?;
        let mut branch_envs = Vec::with_capacity(n);
        for _ in 0..n {
            branch_envs.push(mainline.restore(snap)?);
        }
        let results = crate::par::map_owned(
            branch_envs.into_iter().enumerate().collect::<Vec<_>>(),
            |(branch_idx, branch_env)| {
                let branch_seed = seeds::derive_path(
                    seed,
                    &[stream::BRANCH, block_idx as u64, branch_idx as u64],
                );
                roll_branch(
                    task,
                    policy,
                    branch_env,
                    state.clone(),
                    block_len,
                    cfg.t,
                    branch_seed,
                )
            },
        );
        let mut branches = Vec::with_capacity(n);
        for result in results {
            branches.push(result?);
        }

        let winner_idx = if block_idx == last_block {
            // Final block: branches ran to termination; select by reward.
            let scratch = Provenance::new(Strategy::SegmentLevel, n, Some(l), seed);
            let mut rewards: Vec<Option<u8>> = Vec::with_capacity(n);
            for branch in &branches {
                let traj = Trajectory::from_partial(
                    &task.task_id,
                    task.initial_prompt(),
                    branch.end_state.history(),
                    cfg.t,
                    scratch.clone(),
                )?;
                rewards.push(match branch.env.terminal_reward(&traj) {
                    Ok(outcome) => Some(outcome.value),
                    Err(_) => None,
                });
            }
            let solved = rewards.iter().position(|r| *r == Some(1));
            let (winner, random_pick) = match solved {
                Some(idx) => (idx, false),
                None => {
                    let evaluated: Vec<usize> = (0..n).filter(|i| rewards[*i].is_some()).collect();
                    if evaluated.is_empty() {
                        (0, false)
                    } else {
                        let pick_seed = seeds::derive_path(
                            seed,
                            &[stream::FINAL_PICK, block_idx as u64],
                        );
                        let pick = seeds::rng(pick_seed).gen_range(0..evaluated.len());
                        (evaluated[pick], true)
                    }
                }
            };
            if mainline.is_deterministic() {
                preset_reward = rewards[winner];
            }
            provenance.verdicts.push(VerdictRecord::SegmentReward {
                block: block_idx,
                rewards,
                winner,
                random_pick,
            });
            winner
        } else {
            let tournament_seed =
                seeds::derive_path(seed, &[stream::PAIR_ORDER, block_idx as u64]);
            let segment_steps: Vec<&[Step]> = branches
                .iter()
                .map(|b| b.candidate.steps.as_slice())
                .collect();
            let fallbacks = Mutex::new(Vec::<(usize, usize)>::new());
            let judge_calls = AtomicUsize::new(0);
            let result = crate::rubrics::run_pairwise_tournament(
                n,
                tournament_seed,
                |first, second| -> Result<bool, PipelineError> {
                    judge_calls.fetch_add(1, Ordering::SeqCst);
                    let prompt = assemble_pair_prompt(
                        &state,
                        segment_steps[first],
                        segment_steps[second],
                        &task.side,
                        rubrics,
                    )?;
                    hooks.emit(PromptKind::Pair, block_idx, &prompt);
                    let (first_wins, fallback) = judged_pair(
                        judge,
                        &prompt,
                        &state,
                        segment_steps[first],
                        segment_steps[second],
                        cfg.judge_retries,
                        seeds::derive_path(
                            seed,
                            &[stream::FALLBACK, block_idx as u64, first as u64, second as u64],
                        ),
                    )?;
                    if fallback {
                        fallbacks.lock().expect("fallback log").push((first, second));
                    }
                    Ok(first_wins)
                },
            )?;
            debug_assert_eq!(judge_calls.load(Ordering::SeqCst), n * (n - 1) / 2);
            let fallbacks = fallbacks.into_inner().expect("fallback log");
            let pair_outcomes = result
                .decisions
                .iter()
                .map(|d| PairOutcome {
                    first: d.first,
                    second: d.second,
                    first_wins: d.first_wins,
                    fallback: fallbacks.contains(&(d.first, d.second)),
                })
                .collect();
            provenance.verdicts.push(VerdictRecord::SegmentTournament {
                block: block_idx,
                candidate_lengths: branches.iter().map(|b| b.candidate.steps.len()).collect(),
                pair_outcomes,
                winner: result.winner,
            });
            result.winner
        };

        let winner_branch = branches
            .into_iter()
            .nth(winner_idx)
            .expect("winner index in range");
        if mainline.is_deterministic() {
            // Adopt the branch directly; its environment is the mainline now.
            mainline = winner_branch.env;
            state = winner_branch.end_state;
        } else {
            // Literal re-execution on the mainline; keep the re-executed
            // observations and flag any divergence from the branch.
            for (offset, step) in winner_branch.candidate.steps.iter().enumerate() {
                let observation = mainline.execute(&state, &step.action)?;
                if observation != step.observation {
                    provenance.verdicts.push(VerdictRecord::Divergence {
                        block: block_idx,
                        step: state.history().len(),
                    });
                }
                let _ = offset;
                state = state.transition(step.action.clone(), observation)?;
            }
            preset_reward = None;
        }
        if winner_branch.candidate.terminated_early {
            break;
        }
    }

    let trajectory = Trajectory::from_partial(
        &task.task_id,
        task.initial_prompt(),
        state.history(),
        cfg.t,
        provenance,
    )?;
    attach_reward(trajectory, preset_reward, mainline.as_ref())
}

/// Dispatch one rollout according to the configured strategy.
pub fn rollout(
    task: &TaskSpec,
    policy: &dyn Policy,
    env: Box<dyn Environment>,
    judge: &dyn Judge,
    rubrics: &RubricSet,
    cfg: &RunConfig,
    seed: u64,
    hooks: &EngineHooks,
) -> Result<Trajectory, PipelineError> {
    match cfg.strategy {
        Strategy::Baseline => rollout_baseline(task, policy, env, cfg, seed),
        Strategy::TurnLevel => {
            rollout_turn_level(task, policy, env, judge, rubrics, cfg, seed, hooks)
        }
        Strategy::SegmentLevel => {
            rollout_segment_level(task, policy, env, judge, rubrics, cfg, seed, hooks)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::SamplingParams;
    use crate::dataset::EnvProvider;
    use crate::simenv::{
        make_task_spec, OracleGrm, ScriptedPolicy, ScriptedPolicyConfig, SimEnvProvider,
    };

    fn sim_fixture(
        count: usize,
        difficulty: u32,
        competence: f64,
    ) -> (Vec<TaskSpec>, ScriptedPolicy, OracleGrm, RubricSet) {
        let specs: Vec<TaskSpec> = (0..count)
            .map(|i| make_task_spec(seeds::derive(1000, i as u64), difficulty))
            .collect();
        let rubrics = RubricSet::default_turn();
        let policy = ScriptedPolicy::for_specs(
            &specs,
            ScriptedPolicyConfig::new(competence),
            SamplingParams::default(),
        )
        .unwrap();
        let judge = OracleGrm::for_specs(&specs, &rubrics).unwrap();
        (specs, policy, judge, rubrics)
    }

    #[test]
    fn partition_horizon_laws() {
        // Hand-enumerated block bounds: ceil(20/7) = 3 blocks, last is 20-14.
        assert_eq!(partition_horizon(20, 7).unwrap(), vec![7, 7, 6]);
        assert_eq!(partition_horizon(20, 5).unwrap(), vec![5, 5, 5, 5]);
        assert_eq!(partition_horizon(5, 5).unwrap(), vec![5]);
        assert!(partition_horizon(5, 6).is_err());
        assert!(partition_horizon(5, 0).is_err());
    }

    #[test]
    fn baseline_competent_run_succeeds_and_pads() {
        let (specs, policy, _judge, _rubrics) = sim_fixture(1, 1, 1.0);
        let cfg = RunConfig::new(Strategy::Baseline, 1, None, 20);
        let env = SimEnvProvider.make_env(&specs[0]).unwrap();
        let traj = rollout_baseline(&specs[0], &policy, env, &cfg, 7).unwrap();
        assert_eq!(traj.terminal_reward, Some(1));
        assert_eq!(traj.steps.len(), 20);
        assert_eq!(traj.real_length, 10, "ideal workflow takes 10 turns");
        assert!(traj.steps[traj.real_length - 1].action.is_finish());
        assert!(traj.steps[traj.real_length..].iter().all(Step::is_null));
        traj.validate().unwrap();
    }

    #[test]
    fn baseline_is_seed_deterministic() {
        let (specs, policy, _judge, _rubrics) = sim_fixture(1, 2, 0.6);
        let cfg = RunConfig::new(Strategy::Baseline, 1, None, 20);
        let a = rollout_baseline(&specs[0], &policy, SimEnvProvider.make_env(&specs[0]).unwrap(), &cfg, 3).unwrap();
        let b = rollout_baseline(&specs[0], &policy, SimEnvProvider.make_env(&specs[0]).unwrap(), &cfg, 3).unwrap();
        assert_eq!(a.to_json_line(), b.to_json_line());
    }

    #[test]
    fn turn_level_n1_equals_baseline() {
        let (specs, policy, judge, rubrics) = sim_fixture(3, 1, 0.6);
        for spec in &specs {
            let base_cfg = RunConfig::new(Strategy::Baseline, 1, None, 20);
            let turn_cfg = RunConfig::new(Strategy::TurnLevel, 1, None, 20);
            let baseline = rollout_baseline(
                spec,
                &policy,
                SimEnvProvider.make_env(spec).unwrap(),
                &base_cfg,
                11,
            )
            .unwrap();
            let filtered = rollout_turn_level(
                spec,
                &policy,
                SimEnvProvider.make_env(spec).unwrap(),
                &judge,
                &rubrics,
                &turn_cfg,
                11,
                &EngineHooks::default(),
            )
            .unwrap();
            assert_eq!(baseline.steps, filtered.steps);
            assert_eq!(baseline.terminal_reward, filtered.terminal_reward);
        }
    }

    #[test]
    fn turn_level_records_one_verdict_per_real_step() {
        let (specs, policy, judge, rubrics) = sim_fixture(1, 1, 0.6);
        let cfg = RunConfig::new(Strategy::TurnLevel, 3, None, 20);
        let traj = rollout_turn_level(
            &specs[0],
            &policy,
            SimEnvProvider.make_env(&specs[0]).unwrap(),
            &judge,
            &rubrics,
            &cfg,
            5,
            &EngineHooks::default(),
        )
        .unwrap();
        assert_eq!(traj.provenance.verdicts.len(), traj.real_length);
        for verdict in &traj.provenance.verdicts {
            match verdict {
                VerdictRecord::Turn { candidates, .. } => assert_eq!(candidates.len(), 3),
                other => panic!("unexpected record {other:?}"),
            }
        }
    }

    #[test]
    fn turn_level_oracle_beats_noise() {
        // With the oracle picking among 3 candidates at competence 0.6, the
        // executed action should almost always be the workflow-ideal one.
        let (specs, policy, judge, rubrics) = sim_fixture(8, 1, 0.6);
        let cfg = RunConfig::new(Strategy::TurnLevel, 3, None, 20);
        let mut solved = 0;
        for spec in &specs {
            let traj = rollout_turn_level(
                spec,
                &policy,
                SimEnvProvider.make_env(spec).unwrap(),
                &judge,
                &rubrics,
                &cfg,
                13,
                &EngineHooks::default(),
            )
            .unwrap();
            solved += traj.terminal_reward.unwrap() as usize;
        }
        assert!(solved >= 7, "expected near-universal success, got {solved}/8");
    }

    struct RejectingJudge;
    impl Judge for RejectingJudge {
        fn judge(&self, _query: &JudgeQuery<'_>) -> Result<String, ActorError> {
            Ok("I cannot decide.".to_string())
        }
    }

    #[test]
    fn unparseable_verdicts_fall_back_seeded() {
        let (specs, policy, _judge, rubrics) = sim_fixture(1, 0, 1.0);
        let cfg = RunConfig::new(Strategy::TurnLevel, 3, None, 10);
        let traj = rollout_turn_level(
            &specs[0],
            &policy,
            SimEnvProvider.make_env(&specs[0]).unwrap(),
            &RejectingJudge,
            &rubrics,
            &cfg,
            5,
            &EngineHooks::default(),
        )
        .unwrap();
        assert!(traj.provenance.fallback_count() > 0);
        assert_eq!(traj.provenance.fallback_count(), traj.real_length);
        // Competence 1.0 makes all candidates identical, so the random
        // fallback still walks the ideal workflow.
        assert_eq!(traj.terminal_reward, Some(1));
    }

    #[test]
    fn segment_level_tournaments_skip_final_block() {
        let (specs, policy, judge, rubrics) = sim_fixture(1, 1, 0.6);
        let mut cfg = RunConfig::new(Strategy::SegmentLevel, 3, Some(7), 20);
        cfg.judge_retries = 1;
        let traj = rollout_segment_level(
            &specs[0],
            &policy,
            SimEnvProvider.make_env(&specs[0]).unwrap(),
            &judge,
            &rubrics,
            &cfg,
            2,
            &EngineHooks::default(),
        )
        .unwrap();
        traj.validate().unwrap();
        let mut tournament_blocks = Vec::new();
        let mut reward_blocks = Vec::new();
        for verdict in &traj.provenance.verdicts {
            match verdict {
                VerdictRecord::SegmentTournament { block, .. } => tournament_blocks.push(*block),
                VerdictRecord::SegmentReward { block, .. } => reward_blocks.push(*block),
                _ => {}
            }
        }
        // Blocks [7,7,6]: tournaments at most on blocks 0 and 1, reward rule
        // only ever on the final block.
        assert!(!tournament_blocks.contains(&2));
        for b in &reward_blocks {
            assert_eq!(*b, 2);
        }
    }

    #[test]
    fn segment_level_adopts_exact_concatenation() {
        let (specs, policy, judge, rubrics) = sim_fixture(2, 1, 0.7);
        let cfg = RunConfig::new(Strategy::SegmentLevel, 2, Some(5), 20);
        for spec in &specs {
            let traj = rollout_segment_level(
                spec,
                &policy,
                SimEnvProvider.make_env(spec).unwrap(),
                &judge,
                &rubrics,
                &cfg,
                9,
                &EngineHooks::default(),
            )
            .unwrap();
            traj.validate().unwrap();
            assert_eq!(traj.steps.len(), 20);
            // No step loss across block boundaries: real steps are contiguous
            // and every block contributed at most L steps.
            assert!(traj.real_length <= 20);
        }
    }

    struct NoisyEnv {
        inner: Box<dyn Environment>,
        counter: std::sync::atomic::AtomicU64,
    }

    impl Environment for NoisyEnv {
        fn execute(
            &mut self,
            state: &State,
            action: &crate::trajectory::Action,
        ) -> Result<crate::trajectory::Observation, ActorError> {
            let mut obs = self.inner.execute(state, action)?;
            if !obs.is_null {
                let tick = self.counter.fetch_add(1, Ordering::SeqCst);
                obs.raw_text.push_str(&format!(" [tick {tick}]"));
            }
            Ok(obs)
        }
        fn is_deterministic(&self) -> bool {
            false
        }
        fn supports_snapshot(&self) -> bool {
            self.inner.supports_snapshot()
        }
        fn snapshot(&mut self) -> Result<crate::actors::SnapshotHandle, ActorError> {
            self.inner.snapshot()
        }
        fn restore(
            &self,
            handle: crate::actors::SnapshotHandle,
        ) -> Result<Box<dyn Environment>, ActorError> {
            Ok(Box::new(NoisyEnv {
                inner: self.inner.restore(handle)?,
                counter: std::sync::atomic::AtomicU64::new(0),
            }))
        }
        fn terminal_reward(
            &self,
            trajectory: &Trajectory,
        ) -> Result<crate::actors::RewardOutcome, ActorError> {
            self.inner.terminal_reward(trajectory)
        }
    }

    #[test]
    fn nondeterministic_adoption_reexecutes_and_flags_divergence() {
        let (specs, policy, judge, rubrics) = sim_fixture(1, 0, 1.0);
        let cfg = RunConfig::new(Strategy::SegmentLevel, 2, Some(4), 12);
        let env = Box::new(NoisyEnv {
            inner: SimEnvProvider.make_env(&specs[0]).unwrap(),
            counter: std::sync::atomic::AtomicU64::new(0),
        });
        let traj = rollout_segment_level(
            &specs[0], &policy, env, &judge, &rubrics, &cfg, 4,
            &EngineHooks::default(),
        )
        .unwrap();
        let divergences = traj
            .provenance
            .verdicts
            .iter()
            .filter(|v| matches!(v, VerdictRecord::Divergence { .. }))
            .count();
        assert!(
            divergences > 0,
            "tick counters differ between branch and mainline, divergence must be flagged"
        );
        // Re-executed observations are the recorded ones.
        assert!(traj
            .real_steps()
            .iter()
            .filter(|s| !s.observation.is_null)
            .all(|s| s.observation.raw_text.contains("[tick")));
    }

    struct NoSnapshotEnv(Box<dyn Environment>);
    impl Environment for NoSnapshotEnv {
        fn execute(
            &mut self,
            state: &State,
            action: &crate::trajectory::Action,
        ) -> Result<crate::trajectory::Observation, ActorError> {
            self.0.execute(state, action)
        }
        fn is_deterministic(&self) -> bool {
            true
        }
        fn supports_snapshot(&self) -> bool {
            false
        }
        fn snapshot(&mut self) -> Result<crate::actors::SnapshotHandle, ActorError> {
            Err(ActorError::SnapshotUnsupported)
        }
        fn restore(
            &self,
            _handle: crate::actors::SnapshotHandle,
        ) -> Result<Box<dyn Environment>, ActorError> {
            Err(ActorError::SnapshotUnsupported)
        }
        fn terminal_reward(
            &self,
            trajectory: &Trajectory,
        ) -> Result<crate::actors::RewardOutcome, ActorError> {
            self.0.terminal_reward(trajectory)
        }
    }

    #[test]
    fn segment_level_fails_fast_without_snapshots() {
        let (specs, policy, judge, rubrics) = sim_fixture(1, 0, 1.0);
        let cfg = RunConfig::new(Strategy::SegmentLevel, 2, Some(5), 20);
        let env = Box::new(NoSnapshotEnv(SimEnvProvider.make_env(&specs[0]).unwrap()));
        let err = rollout_segment_level(
            &specs[0], &policy, env, &judge, &rubrics, &cfg, 0,
            &EngineHooks::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Actor(ActorError::SnapshotUnsupported)
        ));
    }

    #[test]
    fn accept_requires_reward() {
        let (specs, policy, _judge, _rubrics) = sim_fixture(1, 0, 1.0);
        let cfg = RunConfig::new(Strategy::Baseline, 1, None, 20);
        let traj = rollout_baseline(
            &specs[0],
            &policy,
            SimEnvProvider.make_env(&specs[0]).unwrap(),
            &cfg,
            0,
        )
        .unwrap();
        assert!(accept(&traj).unwrap());

        let mut unevaluated = traj;
        unevaluated.terminal_reward = None;
        assert!(matches!(
            accept(&unevaluated),
            Err(PipelineError::MissingReward(_))
        ));
    }

    #[test]
    fn run_config_validation_lists_all_violations() {
        let mut cfg = RunConfig::new(Strategy::SegmentLevel, 1, Some(30), 20);
        cfg.cap = 0;
        let problems = cfg.validate();
        assert!(problems.iter().any(|p| p.contains("cap")));
        assert!(problems.iter().any(|p| p.contains("n >= 2")));
        assert!(problems.iter().any(|p| p.contains("1 <= l <= t")));
        assert!(problems.len() >= 3);

        let good = RunConfig::new(Strategy::TurnLevel, 3, None, 20);
        assert!(good.validate().is_empty());
    }
}
