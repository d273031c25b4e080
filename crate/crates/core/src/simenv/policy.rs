//! Scripted agent policies over simulator tasks.
//!
//! A scripted policy knows the ideal resolution workflow for its task and,
//! with probability `competence`, emits the next uncompleted workflow step.
//! Otherwise it draws from a noise menu covering the three recoverable error
//! categories plus a redundancy action, so every analyzer category is
//! reachable from generated corpora.

use super::SimTask;
use crate::actors::{ActorError, Policy, SamplingParams};
use crate::seeds;
use crate::trajectory::{Action, State, Step};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub(crate) const REPRO_SCRIPT: &str = "reproduce_error.py";
pub(crate) const COMP_SCRIPT: &str = "comprehensive_tests.py";

/// Completed-stage survey of the ideal workflow, reconstructed from history.
#[derive(Debug, Default, Clone)]
pub(crate) struct Workflow {
    pub tests_run: bool,
    pub listed: bool,
    pub inspected: bool,
    pub repro_created: bool,
    pub repro_run: bool,
    pub fixed: bool,
    pub tests_after_fix: bool,
    pub comp_created: bool,
    pub comp_run: bool,
    pub finished: bool,
    pub created_scripts: Vec<String>,
}

impl Workflow {
    pub fn done_count(&self) -> usize {
        [
            self.tests_run,
            self.listed,
            self.inspected,
            self.repro_created,
            self.repro_run,
            self.fixed,
            self.tests_after_fix,
            self.comp_created,
            self.comp_run,
            self.finished,
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }
}

pub(crate) fn survey(task: &SimTask, history: &[Step]) -> Workflow {
    let mut wf = Workflow::default();
    for step in history.iter().filter(|s| !s.is_null()) {
        let action = &step.action;
        let ok = step.observation.error_tag.is_none();
        match action.tool_name.as_str() {
            "run_tests" => {
                if wf.fixed {
                    wf.tests_after_fix = true;
                } else {
                    wf.tests_run = true;
                }
            }
            "ls" | "find" => wf.listed = true,
            "view" => {
                if ok && action.arguments.get("path").map(String::as_str) == Some(&task.bug_path) {
                    wf.inspected = true;
                }
            }
            "create_script" => {
                if let Some(name) = action.arguments.get("name") {
                    wf.created_scripts.push(name.clone());
                    if name == REPRO_SCRIPT {
                        wf.repro_created = true;
                    } else if name == COMP_SCRIPT {
                        wf.comp_created = true;
                    }
                }
            }
            "run_script" => {
                if ok {
                    match action.arguments.get("name").map(String::as_str) {
                        Some(REPRO_SCRIPT) => wf.repro_run = true,
                        Some(COMP_SCRIPT) => wf.comp_run = true,
                        _ => {}
                    }
                }
            }
            "edit" => {
                if ok
                    && action.arguments.get("path").map(String::as_str) == Some(&task.bug_path)
                    && action.arguments.get("old").map(String::as_str)
                        == Some(&task.buggy_line)
                {
                    wf.fixed = true;
                }
            }
            "finish" => wf.finished = true,
            _ => {}
        }
    }
    wf
}

fn module_of(task: &SimTask) -> String {
    task.bug_path
        .trim_start_matches("src/")
        .trim_end_matches(".py")
        .to_string()
}

fn repro_body(task: &SimTask) -> String {
    format!(
        "# Reproduce the reported issue.\nfrom src.{module} import {f}\nprint(\"{f}({a}, {b}) =\", {f}({a}, {b}), \"expected {want}\")",
        module = module_of(task),
        f = task.fn_name,
        a = task.operand_a,
        b = task.operand_b,
        want = task.expected_output,
    )
}

fn comp_body(task: &SimTask) -> String {
    format!(
        "# Broader checks around the reported issue.\nfrom src.{module} import {f}\nassert {f}({a}, {b}) == {want}\nprint(\"all checks passed\")",
        module = module_of(task),
        f = task.fn_name,
        a = task.operand_a,
        b = task.operand_b,
        want = task.expected_output,
    )
}

/// Ordered actions for every workflow stage, given the current survey.
pub(crate) fn stage_actions(task: &SimTask, wf: &Workflow) -> Vec<(bool, Action)> {
    let bug_file_len = task.files.get(&task.bug_path).map_or(1, Vec::len);
    vec![
        (wf.tests_run, Action::run_tests()),
        (wf.listed, Action::ls()),
        (wf.inspected, Action::view(&task.bug_path, 1, bug_file_len)),
        (
            wf.repro_created,
            Action::create_script(REPRO_SCRIPT, &repro_body(task)),
        ),
        (wf.repro_run, Action::run_script(REPRO_SCRIPT)),
        (
            wf.fixed,
            Action::edit(&task.bug_path, &task.buggy_line, &task.correct_line),
        ),
        (wf.tests_after_fix, Action::run_tests()),
        (
            wf.comp_created,
            Action::create_script(COMP_SCRIPT, &comp_body(task)),
        ),
        (wf.comp_run, Action::run_script(COMP_SCRIPT)),
        (
            wf.finished,
            Action::finish(Some(&format!(
                "fixed {} in {} and verified with tests",
                task.fn_name, task.bug_path
            ))),
        ),
    ]
}

/// The next uncompleted step of the ideal workflow for this state.
pub fn ideal_next_action(task: &SimTask, state: &State) -> Action {
    let wf = survey(task, state.history());
    for (done, action) in stage_actions(task, &wf) {
        if !done {
            return action;
        }
    }
    // Everything done; close out.
    Action::finish(Some("resolution complete"))
}

/// Probabilities of the four noise templates; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseWeights {
    pub bad_path: f64,
    pub bad_view_range: f64,
    pub bad_edit: f64,
    pub repeat_last: f64,
}

impl Default for NoiseWeights {
    fn default() -> Self {
        NoiseWeights {
            bad_path: 0.25,
            bad_view_range: 0.25,
            bad_edit: 0.25,
            repeat_last: 0.25,
        }
    }
}

impl NoiseWeights {
    fn sum(&self) -> f64 {
        self.bad_path + self.bad_view_range + self.bad_edit + self.repeat_last
    }
}

/// Configuration of a scripted policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPolicyConfig {
    /// Probability that a sampled candidate is the ideal next action.
    pub competence: f64,
    #[serde(default)]
    pub noise: NoiseWeights,
}

impl ScriptedPolicyConfig {
    pub fn new(competence: f64) -> Self {
        ScriptedPolicyConfig {
            competence,
            noise: NoiseWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.competence) {
            return Err(format!(
                "competence must be in [0, 1], got {}",
                self.competence
            ));
        }
        let w = &self.noise;
        for (name, v) in [
            ("bad_path", w.bad_path),
            ("bad_view_range", w.bad_view_range),
            ("bad_edit", w.bad_edit),
            ("repeat_last", w.repeat_last),
        ] {
            if v < 0.0 {
                return Err(format!("noise weight {name} must be >= 0, got {v}"));
            }
        }
        if (w.sum() - 1.0).abs() > 1e-9 {
            return Err(format!("noise weights must sum to 1, got {}", w.sum()));
        }
        Ok(())
    }
}

/// Seed-deterministic scripted policy over a registry of simulator tasks.
pub struct ScriptedPolicy {
    tasks: HashMap<String, SimTask>,
    cfg: ScriptedPolicyConfig,
    params: SamplingParams,
}

impl ScriptedPolicy {
    pub fn new(
        tasks: HashMap<String, SimTask>,
        cfg: ScriptedPolicyConfig,
        params: SamplingParams,
    ) -> Result<Self, ActorError> {
        cfg.validate().map_err(ActorError::PolicyBackend)?;
        params.validate().map_err(ActorError::PolicyBackend)?;
        Ok(ScriptedPolicy { tasks, cfg, params })
    }

    pub fn for_specs(
        specs: &[crate::dataset::TaskSpec],
        cfg: ScriptedPolicyConfig,
        params: SamplingParams,
    ) -> Result<Self, ActorError> {
        Self::new(super::task_registry(specs)?, cfg, params)
    }

    fn draw(&self, task: &SimTask, state: &State, rng: &mut ChaCha8Rng) -> Action {
        if rng.gen::<f64>() < self.cfg.competence {
            return ideal_next_action(task, state);
        }
        let w = &self.cfg.noise;
        let pick: f64 = rng.gen::<f64>() * w.sum().max(f64::MIN_POSITIVE);
        if pick < w.bad_path {
            Action::view(&format!("src/missing_{}.py", rng.gen_range(0..100)), 1, 10)
        } else if pick < w.bad_path + w.bad_view_range {
            let start = rng.gen_range(5..12);
            let end = rng.gen_range(1..4);
            Action::view(&task.bug_path, start, end)
        } else if pick < w.bad_path + w.bad_view_range + w.bad_edit {
            Action::edit(&task.bug_path, "    result = a % b", &task.correct_line)
        } else {
            match state.history().iter().rev().find(|s| !s.is_null()) {
                Some(step) => step.action.clone(),
                None => Action::ls(),
            }
        }
    }
}

impl Policy for ScriptedPolicy {
    fn sample_candidates(
        &self,
        state: &State,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Action>, ActorError> {
        let task = self
            .tasks
            .get(&state.task_id)
            .ok_or_else(|| ActorError::UnknownTask(state.task_id.clone()))?;
        Ok((0..n)
            .map(|k| {
                // Temperature 0 collapses every candidate onto the same draw.
                let k_eff = if self.params.temperature == 0.0 { 0 } else { k as u64 };
                let child = seeds::derive_path(seed, &[seeds::stream::CANDIDATE, k_eff]);
                self.draw(task, state, &mut seeds::rng(child))
            })
            .collect())
    }
}
