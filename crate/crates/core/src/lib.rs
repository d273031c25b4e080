//! Rubric-guided GRM rejection sampling for tool-using agent trajectories.
//!
//! The crate collects fine-tuning data by interleaving generative-reward-model
//! selection into rollout generation — per turn (N unexecuted candidate
//! actions, judged before execution) or per segment (N executed continuations
//! on snapshot branches, judged by pairwise tournament) — and accepting only
//! trajectories whose binary verifiable reward is 1. A deterministic
//! simulator, scripted policies, and a ground-truth oracle judge make the
//! whole pipeline reproducible at desk scale, and the analyzer reports
//! behavioral patterns of the resulting corpora.

pub mod actors;
pub mod analyzer;
pub mod dataset;
pub mod filtering;
pub mod par;
pub mod rubrics;
pub mod seeds;
pub mod simenv;
pub mod trajectory;

pub use filtering::{PipelineError, RunConfig};
pub use trajectory::{Action, Observation, State, Step, Trajectory};
