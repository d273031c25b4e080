//! Ground-truth GRM for simulator tasks.
//!
//! The oracle reads the structured side of a judging request (never the
//! prose prompt), scores candidates with rubric proxies computed from
//! simulator ground truth, and emits verdict text in the exact conclusion
//! formats the parsers expect. The emitted winner is always the argmax of
//! the hidden utilities with lowest-index ties.

use super::policy::{stage_actions, survey, Workflow};
use super::SimTask;
use crate::actors::{ActorError, Judge, JudgeQuery};
use crate::rubrics::RubricSet;
use crate::trajectory::{Action, State, Step};
use std::collections::HashMap;

/// Hidden utilities plus the verdict text handed back to the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleJudgment {
    pub utilities: Vec<f64>,
    pub verdict_text: String,
}

pub struct OracleGrm {
    tasks: HashMap<String, SimTask>,
    weights: Vec<f64>,
}

impl OracleGrm {
    pub fn new(tasks: HashMap<String, SimTask>, rubrics: &RubricSet) -> Self {
        OracleGrm {
            tasks,
            weights: rubrics.weights(),
        }
    }

    pub fn for_specs(
        specs: &[crate::dataset::TaskSpec],
        rubrics: &RubricSet,
    ) -> Result<Self, ActorError> {
        Ok(Self::new(super::task_registry(specs)?, rubrics))
    }

    fn task(&self, task_id: &str) -> Result<&SimTask, ActorError> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| ActorError::UnknownTask(task_id.to_string()))
    }

    fn weighted(&self, scores: &[u8; 4]) -> f64 {
        scores
            .iter()
            .zip(self.weights.iter().chain(std::iter::repeat(&0.0)))
            .map(|(s, w)| f64::from(*s) * w)
            .sum()
    }

    /// Score one unexecuted candidate with rubric proxies (each 0..=4).
    fn rubric_scores(&self, task: &SimTask, history: &[Step], action: &Action) -> [u8; 4] {
        let wf = survey(task, history);
        let stages = stage_actions(task, &wf);
        let errors = would_error(task, &wf, history, action);

        // Rubric 1 proxy: workflow advancement.
        let ideal = stages
            .iter()
            .find(|(done, _)| !done)
            .map(|(_, a)| a.clone())
            .unwrap_or_else(|| Action::finish(Some("resolution complete")));
        let workflow = if *action == ideal {
            4
        } else if stages.iter().any(|(done, a)| !done && a == action) {
            2
        } else if stages.iter().any(|(done, a)| *done && a == action) {
            1
        } else {
            0
        };

        // Rubric 2 proxy: expected information gain.
        let info = if errors {
            0
        } else {
            match action.tool_name.as_str() {
                "view" => {
                    if history.iter().any(|s| s.action == *action) {
                        1
                    } else {
                        3
                    }
                }
                "ls" | "find" => {
                    if wf.listed {
                        1
                    } else {
                        3
                    }
                }
                "run_tests" => 3,
                "create_script" | "run_script" => {
                    if history.iter().any(|s| s.action == *action) {
                        1
                    } else {
                        3
                    }
                }
                "edit" => {
                    let fixes_bug = action.arguments.get("path").map(String::as_str)
                        == Some(&task.bug_path)
                        && action.arguments.get("old").map(String::as_str)
                            == Some(&task.buggy_line);
                    if fixes_bug {
                        4
                    } else {
                        1
                    }
                }
                "finish" => {
                    if wf.fixed {
                        3
                    } else {
                        0
                    }
                }
                _ => 0,
            }
        };

        // Rubric 3 proxy: strategic proximity to the ground-truth location.
        let strategy = if errors {
            0
        } else {
            match action.tool_name.as_str() {
                "finish" => {
                    if wf.fixed {
                        4
                    } else {
                        0
                    }
                }
                "ls" | "find" | "run_tests" => 2,
                "create_script" | "run_script" => 3,
                _ => match touched_path(action) {
                    Some(p) if p == task.bug_path => 4,
                    Some(p) if task.files.contains_key(p) => 1,
                    Some(_) => 1,
                    None => 2,
                },
            }
        };

        // Rubric 4 proxy: error avoidance and non-redundancy.
        let error_control = if errors {
            0
        } else if history
            .iter()
            .rev()
            .find(|s| !s.is_null())
            .is_some_and(|s| s.action.raw_text == action.raw_text)
        {
            1
        } else {
            4
        };

        [workflow, info, strategy, error_control]
    }

    /// Judge N candidate actions; emits per-candidate rubric scores, weighted
    /// totals, and the `ACTION i WINS` conclusion.
    pub fn judge_turn(
        &self,
        task: &SimTask,
        state: &State,
        candidates: &[Action],
    ) -> OracleJudgment {
        let scored: Vec<([u8; 4], f64)> = candidates
            .iter()
            .map(|c| {
                let s = self.rubric_scores(task, state.history(), c);
                let u = self.weighted(&s);
                (s, u)
            })
            .collect();
        let utilities: Vec<f64> = scored.iter().map(|(_, u)| *u).collect();
        let winner = argmax(&utilities);
        let mut text = format!(
            "Evaluation of {} candidate actions against {} rubrics.\n",
            candidates.len(),
            self.weights.len()
        );
        for (i, (scores, utility)) in scored.iter().enumerate() {
            text.push_str(&format!(
                "Action {}: rubric scores [{}, {}, {}, {}] -> weighted total {:.2}\n",
                i + 1,
                scores[0],
                scores[1],
                scores[2],
                scores[3],
                utility
            ));
        }
        text.push_str(&format!("ACTION {} WINS", winner + 1));
        OracleJudgment {
            utilities,
            verdict_text: text,
        }
    }

    fn segment_utility(&self, task: &SimTask, prefix: &State, steps: &[Step]) -> f64 {
        let before = survey(task, prefix.history()).done_count();
        let mut state = prefix.clone();
        let mut step_total = 0.0;
        let mut errors = 0usize;
        let mut counted = 0usize;
        for step in steps.iter().filter(|s| !s.is_null()) {
            let scores = self.rubric_scores(task, state.history(), &step.action);
            step_total += self.weighted(&scores);
            counted += 1;
            if step.observation.error_tag.is_some() {
                errors += 1;
            }
            if let Ok(next) = state.transition(step.action.clone(), step.observation.clone()) {
                state = next;
            }
        }
        let after = survey(task, state.history()).done_count();
        let progress = after.saturating_sub(before) as f64;
        let mean_step = if counted > 0 {
            step_total / counted as f64
        } else {
            0.0
        };
        progress * 2.0 + mean_step - errors as f64 * 0.5
    }

    /// Judge a presented pair of executed segments; emits exactly one
    /// terminal YES/NO token.
    pub fn judge_pair(
        &self,
        task: &SimTask,
        prefix: &State,
        first: &[Step],
        second: &[Step],
    ) -> OracleJudgment {
        let u_first = self.segment_utility(task, prefix, first);
        let u_second = self.segment_utility(task, prefix, second);
        let first_wins = u_first >= u_second;
        let text = format!(
            "Compared two candidate trajectory segments on the rubric proxies: first {:.2} vs second {:.2}.\n{}",
            u_first,
            u_second,
            if first_wins { "YES" } else { "NO" }
        );
        OracleJudgment {
            utilities: vec![u_first, u_second],
            verdict_text: text,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn touched_path(action: &Action) -> Option<&str> {
    action
        .arguments
        .get("path")
        .or_else(|| action.arguments.get("name"))
        .map(String::as_str)
}

/// Predict whether executing `action` would produce an error observation,
/// from history alone (the oracle never consults live environment state).
fn would_error(task: &SimTask, wf: &Workflow, history: &[Step], action: &Action) -> bool {
    let known = |path: &str| -> bool {
        task.files.contains_key(path) || wf.created_scripts.iter().any(|s| s == path)
    };
    match action.tool_name.as_str() {
        "view" => {
            let Some(path) = action.arguments.get("path") else { return true };
            if !known(path) {
                return true;
            }
            let start: usize = action.arguments.get("start").and_then(|v| v.parse().ok()).unwrap_or(0);
            let end: usize = action.arguments.get("end").and_then(|v| v.parse().ok()).unwrap_or(0);
            if start > end || start < 1 {
                return true;
            }
            match task.files.get(path) {
                Some(lines) => end > lines.len(),
                None => false,
            }
        }
        "edit" => {
            let Some(path) = action.arguments.get("path") else { return true };
            if !known(path) {
                return true;
            }
            let Some(old) = action.arguments.get("old") else { return true };
            if path == &task.bug_path && old == &task.buggy_line {
                // Repeating the fix after it landed fails the replacement.
                return wf.fixed;
            }
            match task.files.get(path) {
                Some(lines) => !lines.iter().any(|l| l.contains(old.as_str())),
                None => false,
            }
        }
        "run_script" => {
            let Some(name) = action.arguments.get("name") else { return true };
            !known(name)
        }
        "ls" | "find" | "run_tests" | "create_script" | "finish" => false,
        // Unparsed commands bounce off the simulator with other_error.
        _ => {
            let _ = history;
            true
        }
    }
}

impl Judge for OracleGrm {
    fn judge(&self, query: &JudgeQuery<'_>) -> Result<String, ActorError> {
        match query {
            JudgeQuery::Turn {
                state, candidates, ..
            } => {
                let task = self.task(&state.task_id)?;
                Ok(self.judge_turn(task, state, candidates).verdict_text)
            }
            JudgeQuery::Pair {
                prefix,
                first,
                second,
                ..
            } => {
                let task = self.task(&prefix.task_id)?;
                Ok(self.judge_pair(task, prefix, first, second).verdict_text)
            }
        }
    }
}
