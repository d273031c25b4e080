//! Contracts for the three external intelligences: the agent policy, the
//! environment (executor plus verifiable reward), and the GRM judge.
//!
//! Policies and judges are safe for concurrent calls. An environment is
//! single-owner: at most one in-flight execute per handle. Parallel branch
//! rollouts hold one restored environment each, never a shared one.
//!
//! Recoverable tool failures (missing paths, bad view ranges, failed string
//! replacements) are ordinary observations carrying an `error_tag`, never
//! `Err` values. Errors from these traits abort the whole task rollout.

pub mod gateway;

use crate::trajectory::{Action, State, Step, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors that abort a task rollout.
#[derive(Debug, Error)]
pub enum ActorError {
    #[error("policy backend unavailable: {0}")]
    PolicyBackend(String),
    #[error("environment failure: {0}")]
    Environment(String),
    #[error("environment does not support snapshots")]
    SnapshotUnsupported,
    #[error("stale or foreign snapshot handle")]
    StaleSnapshot,
    #[error("reward evaluation failed: {0}")]
    RewardEvaluation(String),
    #[error("judge backend unavailable: {0}")]
    JudgeBackend(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

/// Binary terminal verifiable reward with diagnostic detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: u8,
    pub detail: String,
}

impl RewardOutcome {
    pub fn new(value: u8, detail: impl Into<String>) -> Self {
        debug_assert!(value <= 1);
        RewardOutcome {
            value,
            detail: detail.into(),
        }
    }
}

/// Sampling knobs shared by policy backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_response_len: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            max_response_len: 4096,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// The agent policy: maps a state to candidate next actions.
pub trait Policy: Send + Sync {
    /// Draw exactly `n` candidate actions independently from the same state.
    ///
    /// Return order is sampling order. `seed` is the engine-derived child
    /// seed for this call; scripted backends must be fully deterministic in
    /// it, remote backends pass it through when supported.
    fn sample_candidates(
        &self,
        state: &State,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Action>, ActorError>;
}

/// Opaque handle to a saved environment state.
///
/// Handles are scoped to the environment instance that created them;
/// restoring against any other instance fails with `StaleSnapshot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHandle {
    pub env_uid: u64,
    pub snap_id: u64,
}

/// The task environment: executes actions, snapshots state, and evaluates
/// the terminal verifiable reward.
pub trait Environment: Send {
    /// Execute one action and return the feedback observation. Recoverable
    /// tool failures are observations; only crashes return `Err`.
    fn execute(&mut self, state: &State, action: &Action) -> Result<crate::trajectory::Observation, ActorError>;

    /// Equal (state, action) inputs yield equal observations when true.
    fn is_deterministic(&self) -> bool;

    fn supports_snapshot(&self) -> bool;

    /// Save the current environment state.
    fn snapshot(&mut self) -> Result<SnapshotHandle, ActorError>;

    /// Produce an independent environment indistinguishable from this one at
    /// snapshot time. Mutating one branch never affects another.
    fn restore(&self, handle: SnapshotHandle) -> Result<Box<dyn Environment>, ActorError>;

    /// Evaluate the binary terminal reward of a padded trajectory against
    /// the environment's current state.
    fn terminal_reward(&self, trajectory: &Trajectory) -> Result<RewardOutcome, ActorError>;
}

/// Structured payload attached to a judging request. Oracle judges read the
/// structure; remote judges read only the assembled prompt.
#[derive(Debug)]
pub enum JudgeQuery<'a> {
    /// N unexecuted candidate actions from a shared state.
    Turn {
        prompt: &'a str,
        state: &'a State,
        candidates: &'a [Action],
    },
    /// Two executed continuations of a shared prefix, in presentation order.
    Pair {
        prompt: &'a str,
        prefix: &'a State,
        first: &'a [Step],
        second: &'a [Step],
    },
}

impl JudgeQuery<'_> {
    pub fn prompt(&self) -> &str {
        match self {
            JudgeQuery::Turn { prompt, .. } | JudgeQuery::Pair { prompt, .. } => prompt,
        }
    }
}

/// The GRM judge: emits free-form verdict text for a judging request.
/// Parsing and retry policy live with the caller.
pub trait Judge: Send + Sync {
    fn judge(&self, query: &JudgeQuery<'_>) -> Result<String, ActorError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_params_validate_temperature() {
        assert!(SamplingParams::default().validate().is_ok());
        let bad = SamplingParams {
            temperature: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
