//! A deterministic, snapshot-capable, SWE-flavored toy environment.
//!
//! Each task is a tiny generated "repository" with exactly one buggy line
//! and optional decoy files. The tool surface mirrors a coding agent's:
//! listing, viewing, string-replacement edits, script creation/execution,
//! a test runner, and finish. All failure modes are observations with fixed
//! message strings (version-pinned so the analyzer's default patterns match
//! them exactly); the environment itself never errors on tool misuse.

mod oracle;
mod policy;

pub use oracle::{OracleGrm, OracleJudgment};
pub use policy::{ideal_next_action, NoiseWeights, ScriptedPolicy, ScriptedPolicyConfig};

use crate::actors::{ActorError, Environment, RewardOutcome, SnapshotHandle};
use crate::dataset::{EnvDescriptor, EnvProvider, TaskSpec};
use crate::rubrics::SideInfo;
use crate::seeds;
use crate::trajectory::{Action, ErrorTag, Observation, State, Trajectory};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

static ENV_UID: AtomicU64 = AtomicU64::new(1);

const MODULE_NAMES: &[&str] = &[
    "parser", "solver", "cache", "router", "metrics", "codec", "search", "ledger",
];
const FN_NAMES: &[&str] = &[
    "combine", "accumulate", "merge_totals", "fold_pair", "apply_delta",
];

/// A generated bug-fixing task: file map, single bug location, ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub seed: u64,
    pub files: BTreeMap<String, Vec<String>>,
    pub bug_path: String,
    /// 0-based line index into `files[bug_path]`.
    pub bug_line: usize,
    pub buggy_line: String,
    pub correct_line: String,
    pub difficulty: u32,
    pub fn_name: String,
    pub operand_a: i64,
    pub operand_b: i64,
    pub expected_output: i64,
    pub buggy_output: i64,
}

impl SimTask {
    pub fn bug_location(&self) -> (&str, usize) {
        (&self.bug_path, self.bug_line)
    }

    /// The unified-diff-style ground-truth patch handed to the judge.
    pub fn ground_truth_patch(&self) -> String {
        format!(
            "--- a/{path}\n+++ b/{path}\n@@ -{line},1 +{line},1 @@\n-{buggy}\n+{correct}",
            path = self.bug_path,
            line = self.bug_line + 1,
            buggy = self.buggy_line,
            correct = self.correct_line,
        )
    }

    pub fn task_statement(&self) -> String {
        format!(
            "Issue: {fn_name}() in {path} returns wrong results. Calling {fn_name}({a}, {b}) \
             returns {got} but {want} was expected. Find the defect, fix it, and verify the fix.",
            fn_name = self.fn_name,
            path = self.bug_path,
            a = self.operand_a,
            b = self.operand_b,
            got = self.buggy_output,
            want = self.expected_output,
        )
    }
}

fn apply_op(op: char, a: i64, b: i64) -> i64 {
    match op {
        '+' => a + b,
        '-' => a - b,
        '*' => a * b,
        _ => unreachable!("operator set is fixed"),
    }
}

/// Deterministically generate a task: one buggy line, `difficulty` decoy files.
pub fn make_task(seed: u64, difficulty: u32) -> SimTask {
    let mut rng = seeds::rng(seed);
    let module = *MODULE_NAMES.choose(&mut rng).expect("nonempty pool");
    let fn_name = *FN_NAMES.choose(&mut rng).expect("nonempty pool");
    let (correct_op, buggy_op) = *[('+', '-'), ('*', '+'), ('-', '+')]
        .choose(&mut rng)
        .expect("nonempty pool");
    let a = rng.gen_range(2..9);
    let b = rng.gen_range(2..9);

    let correct_line = format!("    result = a {correct_op} b");
    let buggy_line = format!("    result = a {buggy_op} b");
    let path = format!("src/{module}.py");
    let lines = vec![
        format!("\"\"\"{module} utilities.\"\"\""),
        String::new(),
        format!("DEFAULT_SCALE = {}", rng.gen_range(1..5)),
        String::new(),
        String::new(),
        format!("def {fn_name}(a, b):"),
        "    \"\"\"Combine two operands.\"\"\"".to_string(),
        buggy_line.clone(),
        "    return result".to_string(),
        String::new(),
        String::new(),
        format!("def scale(value, factor=DEFAULT_SCALE):"),
        "    return value * factor".to_string(),
    ];
    let bug_line = 7;
    debug_assert_eq!(lines[bug_line], buggy_line);

    let mut files = BTreeMap::new();
    files.insert(path.clone(), lines);
    // Decoys: extra files each carrying one similar-looking but innocent line.
    for d in 0..difficulty {
        let other = MODULE_NAMES[rng.gen_range(0..MODULE_NAMES.len())];
        let decoy_path = format!("src/{other}_{d}.py");
        files.insert(
            decoy_path,
            vec![
                format!("\"\"\"{other} helpers (unrelated to the issue).\"\"\""),
                String::new(),
                "def helper(x, y):".to_string(),
                "    result = x - y".to_string(),
                "    return result".to_string(),
            ],
        );
    }

    SimTask {
        seed,
        files,
        bug_path: path,
        bug_line,
        buggy_line,
        correct_line,
        difficulty,
        fn_name: fn_name.to_string(),
        operand_a: a,
        operand_b: b,
        expected_output: apply_op(correct_op, a, b),
        buggy_output: apply_op(buggy_op, a, b),
    }
}

/// Build the full task record (statement, side info, env descriptor) for a
/// generated simulator task.
pub fn make_task_spec(seed: u64, difficulty: u32) -> TaskSpec {
    let task = make_task(seed, difficulty);
    TaskSpec {
        task_id: format!("sim-{seed:016x}-d{difficulty}"),
        task_statement: task.task_statement(),
        side: SideInfo {
            ground_truth_patch: task.ground_truth_patch(),
            task_statement: task.task_statement(),
            extra_notes: None,
        },
        environment: EnvDescriptor::Sim { seed, difficulty },
    }
}

/// Regenerate the `SimTask` registry for a batch of simulator task specs.
pub fn task_registry(specs: &[TaskSpec]) -> Result<HashMap<String, SimTask>, ActorError> {
    let mut map = HashMap::new();
    for spec in specs {
        match spec.environment {
            EnvDescriptor::Sim { seed, difficulty } => {
                map.insert(spec.task_id.clone(), make_task(seed, difficulty));
            }
            EnvDescriptor::External { .. } => {
                return Err(ActorError::Environment(format!(
                    "task {} targets an external environment; the simulator registry cannot serve it",
                    spec.task_id
                )))
            }
        }
    }
    Ok(map)
}

/// The simulator environment instance. Single-owner; snapshots produce
/// independent instances.
pub struct SimEnv {
    task: SimTask,
    files: BTreeMap<String, Vec<String>>,
    uid: u64,
    snapshots: HashMap<u64, BTreeMap<String, Vec<String>>>,
    next_snap: u64,
}

impl SimEnv {
    pub fn new(task: SimTask) -> Self {
        let files = task.files.clone();
        SimEnv {
            task,
            files,
            uid: ENV_UID.fetch_add(1, Ordering::Relaxed),
            snapshots: HashMap::new(),
            next_snap: 0,
        }
    }

    pub fn task(&self) -> &SimTask {
        &self.task
    }

    pub fn file(&self, path: &str) -> Option<&[String]> {
        self.files.get(path).map(Vec::as_slice)
    }

    fn bug_fixed(&self) -> bool {
        self.files
            .get(&self.task.bug_path)
            .and_then(|lines| lines.get(self.task.bug_line))
            .is_some_and(|line| line == &self.task.correct_line)
    }

    fn obs_ls(&self) -> Observation {
        let listing: Vec<&str> = self.files.keys().map(String::as_str).collect();
        Observation::text(listing.join("\n"))
    }

    fn obs_view(&self, action: &Action) -> Observation {
        let path = action.arguments.get("path").map(String::as_str).unwrap_or("");
        let Some(lines) = self.files.get(path) else {
            return Observation::error(
                ErrorTag::PathNotFound,
                format!("{path}: No such file or directory"),
            );
        };
        let start: usize = action.arguments.get("start").and_then(|v| v.parse().ok()).unwrap_or(0);
        let end: usize = action.arguments.get("end").and_then(|v| v.parse().ok()).unwrap_or(0);
        if start > end {
            return Observation::error(
                ErrorTag::InvalidViewRange,
                format!("invalid view range: start line {start} exceeds end line {end}"),
            );
        }
        if start < 1 || end > lines.len() {
            return Observation::error(
                ErrorTag::InvalidViewRange,
                format!(
                    "invalid view range: requested {start}..{end} but {path} has {} lines",
                    lines.len()
                ),
            );
        }
        let body: Vec<String> = lines[start - 1..end]
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{:>4} | {l}", start + i))
            .collect();
        Observation::text(format!("{path} lines {start}..{end}:\n{}", body.join("\n")))
    }

    fn obs_edit(&mut self, action: &Action) -> Observation {
        let path = action.arguments.get("path").cloned().unwrap_or_default();
        let old = action.arguments.get("old").cloned().unwrap_or_default();
        let new = action.arguments.get("new").cloned().unwrap_or_default();
        let Some(lines) = self.files.get_mut(&path) else {
            return Observation::error(
                ErrorTag::PathNotFound,
                format!("{path}: No such file or directory"),
            );
        };
        if old.is_empty() {
            return Observation::error(
                ErrorTag::ReplaceFailed,
                format!("string replacement failed: old string not found in {path}"),
            );
        }
        for line in lines.iter_mut() {
            if let Some(pos) = line.find(&old) {
                line.replace_range(pos..pos + old.len(), &new);
                return Observation::text(format!("edited {path}: replaced 1 occurrence"));
            }
        }
        Observation::error(
            ErrorTag::ReplaceFailed,
            format!("string replacement failed: old string not found in {path}"),
        )
    }

    fn obs_create_script(&mut self, action: &Action) -> Observation {
        let name = action.arguments.get("name").cloned().unwrap_or_default();
        let body = action.arguments.get("body").cloned().unwrap_or_default();
        let lines: Vec<String> = body.lines().map(str::to_string).collect();
        let count = lines.len();
        self.files.insert(name.clone(), lines);
        Observation::text(format!("created {name} ({count} lines)"))
    }

    fn obs_run_tests(&self) -> Observation {
        let t = &self.task;
        if self.bug_fixed() {
            Observation::text(format!(
                "PASSED: all tests passed ({fn}({a}, {b}) == {want})",
                fn = t.fn_name,
                a = t.operand_a,
                b = t.operand_b,
                want = t.expected_output
            ))
        } else {
            Observation::text(format!(
                "FAILED: test_{fn}: expected {want}, got {got}",
                fn = t.fn_name,
                want = t.expected_output,
                got = t.buggy_output
            ))
        }
    }

    fn obs_run_script(&self, action: &Action) -> Observation {
        let name = action.arguments.get("name").map(String::as_str).unwrap_or("");
        if !self.files.contains_key(name) {
            return Observation::error(
                ErrorTag::PathNotFound,
                format!("{name}: No such file or directory"),
            );
        }
        let t = &self.task;
        let lower = name.to_ascii_lowercase();
        if lower.contains("repro") {
            if self.bug_fixed() {
                Observation::text(format!(
                    "reproduction script: issue no longer reproduces ({fn}({a}, {b}) returned {want})",
                    fn = t.fn_name,
                    a = t.operand_a,
                    b = t.operand_b,
                    want = t.expected_output
                ))
            } else {
                Observation::text(format!(
                    "reproduction script: issue reproduced ({fn}({a}, {b}) returned {got}, expected {want})",
                    fn = t.fn_name,
                    a = t.operand_a,
                    b = t.operand_b,
                    got = t.buggy_output,
                    want = t.expected_output
                ))
            }
        } else if lower.contains("test") {
            if self.bug_fixed() {
                Observation::text("comprehensive tests: PASS (4 cases)".to_string())
            } else {
                Observation::text("comprehensive tests: FAIL (3 of 4 cases failed)".to_string())
            }
        } else {
            Observation::text(format!("script {name} executed: no output"))
        }
    }
}

impl Environment for SimEnv {
    fn execute(&mut self, _state: &State, action: &Action) -> Result<Observation, ActorError> {
        Ok(match action.tool_name.as_str() {
            "ls" | "find" => self.obs_ls(),
            "view" => self.obs_view(action),
            "edit" => self.obs_edit(action),
            "create_script" => self.obs_create_script(action),
            "run_tests" => self.obs_run_tests(),
            "run_script" => self.obs_run_script(action),
            // Finish is acknowledged with the fixed empty-success observation.
            "finish" => Observation::null(),
            "null" => Observation::null(),
            _ => Observation::error(
                ErrorTag::OtherError,
                format!("unrecognized or malformed command: {}", action.raw_text),
            ),
        })
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn supports_snapshot(&self) -> bool {
        true
    }

    fn snapshot(&mut self) -> Result<SnapshotHandle, ActorError> {
        let snap_id = self.next_snap;
        self.next_snap += 1;
        self.snapshots.insert(snap_id, self.files.clone());
        Ok(SnapshotHandle {
            env_uid: self.uid,
            snap_id,
        })
    }

    fn restore(&self, handle: SnapshotHandle) -> Result<Box<dyn Environment>, ActorError> {
        if handle.env_uid != self.uid {
            return Err(ActorError::StaleSnapshot);
        }
        let files = self
            .snapshots
            .get(&handle.snap_id)
            .ok_or(ActorError::StaleSnapshot)?
            .clone();
        Ok(Box::new(SimEnv {
            task: self.task.clone(),
            files,
            uid: ENV_UID.fetch_add(1, Ordering::Relaxed),
            snapshots: HashMap::new(),
            next_snap: 0,
        }))
    }

    fn terminal_reward(&self, trajectory: &Trajectory) -> Result<RewardOutcome, ActorError> {
        trajectory
            .validate()
            .map_err(|e| ActorError::RewardEvaluation(e.to_string()))?;
        if self.bug_fixed() {
            Ok(RewardOutcome::new(1, "all tests passed"))
        } else {
            Ok(RewardOutcome::new(
                0,
                format!("test_{} failed", self.task.fn_name),
            ))
        }
    }
}

/// Builds simulator environments from task descriptors.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimEnvProvider;

impl EnvProvider for SimEnvProvider {
    fn make_env(&self, spec: &TaskSpec) -> Result<Box<dyn Environment>, ActorError> {
        match spec.environment {
            EnvDescriptor::Sim { seed, difficulty } => {
                Ok(Box::new(SimEnv::new(make_task(seed, difficulty))))
            }
            EnvDescriptor::External { ref address } => Err(ActorError::Environment(format!(
                "external environment `{address}` is not wired into this build"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> State {
        State::new("t", "p")
    }

    #[test]
    fn make_task_is_seed_deterministic() {
        assert_eq!(make_task(42, 3), make_task(42, 3));
        assert_ne!(make_task(42, 3), make_task(43, 3));
    }

    #[test]
    fn difficulty_counts_decoys() {
        let t0 = make_task(9, 0);
        assert_eq!(t0.files.len(), 1, "difficulty 0 is a single file");
        let t5 = make_task(9, 5);
        assert_eq!(t5.files.len() - 1, 5, "5 decoy files present");
        assert!(t5.files.contains_key(&t5.bug_path));
        assert_ne!(t5.buggy_line, t5.correct_line);
    }

    #[test]
    fn view_range_and_path_errors() {
        let task = make_task(1, 0);
        let path = task.bug_path.clone();
        let mut env = SimEnv::new(task);
        let obs = env.execute(&state(), &Action::view(&path, 9, 2)).unwrap();
        assert_eq!(obs.error_tag, Some(ErrorTag::InvalidViewRange));
        assert!(obs.raw_text.contains("start line 9 exceeds end line 2"));

        let obs = env.execute(&state(), &Action::view(&path, 1, 999)).unwrap();
        assert_eq!(obs.error_tag, Some(ErrorTag::InvalidViewRange));

        let obs = env.execute(&state(), &Action::view("nope.py", 1, 2)).unwrap();
        assert_eq!(obs.error_tag, Some(ErrorTag::PathNotFound));
        assert!(obs.raw_text.contains("No such file or directory"));
    }

    #[test]
    fn edit_fix_then_tests_pass() {
        let task = make_task(2, 1);
        let (path, buggy, correct) = (task.bug_path.clone(), task.buggy_line.clone(), task.correct_line.clone());
        let mut env = SimEnv::new(task);
        let before = env.execute(&state(), &Action::run_tests()).unwrap();
        assert!(before.raw_text.starts_with("FAILED"));

        let obs = env.execute(&state(), &Action::edit(&path, &buggy, &correct)).unwrap();
        assert!(obs.error_tag.is_none());
        let after = env.execute(&state(), &Action::run_tests()).unwrap();
        assert!(after.raw_text.starts_with("PASSED"));

        // Same replacement again: old string is gone.
        let obs = env.execute(&state(), &Action::edit(&path, &buggy, &correct)).unwrap();
        assert_eq!(obs.error_tag, Some(ErrorTag::ReplaceFailed));
    }

    #[test]
    fn reward_reflects_current_bug_line() {
        let task = make_task(3, 0);
        let (path, buggy, correct) = (task.bug_path.clone(), task.buggy_line.clone(), task.correct_line.clone());
        let mut env = SimEnv::new(task);
        let traj = Trajectory::from_partial(
            "t",
            "p",
            &[],
            4,
            crate::trajectory::Provenance::new(crate::trajectory::Strategy::Baseline, 1, None, 0),
        )
        .unwrap();
        assert_eq!(env.terminal_reward(&traj).unwrap().value, 0, "nothing changed");

        env.execute(&state(), &Action::edit(&path, &buggy, &correct)).unwrap();
        assert_eq!(env.terminal_reward(&traj).unwrap().value, 1);
        // Idempotent on a deterministic environment.
        assert_eq!(env.terminal_reward(&traj).unwrap(), env.terminal_reward(&traj).unwrap());

        // Revert the fix: reward drops back to 0.
        env.execute(&state(), &Action::edit(&path, &correct, &buggy)).unwrap();
        assert_eq!(env.terminal_reward(&traj).unwrap().value, 0);
    }

    #[test]
    fn snapshot_branches_are_isolated() {
        let task = make_task(4, 2);
        let (path, buggy, correct) = (task.bug_path.clone(), task.buggy_line.clone(), task.correct_line.clone());
        let mut env = SimEnv::new(task);
        env.execute(&state(), &Action::run_tests()).unwrap();
        let snap = env.snapshot().unwrap();

        let mut branch_a = env.restore(snap).unwrap();
        let mut branch_b = env.restore(snap).unwrap();
        branch_a
            .execute(&state(), &Action::edit(&path, &buggy, &correct))
            .unwrap();
        branch_b
            .execute(&state(), &Action::create_script("notes.txt", "decoy"))
            .unwrap();

        // Hand-traced divergence: A fixed the bug, B did not; original is untouched.
        let traj = Trajectory::from_partial(
            "t",
            "p",
            &[],
            2,
            crate::trajectory::Provenance::new(crate::trajectory::Strategy::Baseline, 1, None, 0),
        )
        .unwrap();
        assert_eq!(branch_a.terminal_reward(&traj).unwrap().value, 1);
        assert_eq!(branch_b.terminal_reward(&traj).unwrap().value, 0);
        assert_eq!(env.terminal_reward(&traj).unwrap().value, 0);
    }

    #[test]
    fn stale_snapshot_handle_is_rejected() {
        let mut env = SimEnv::new(make_task(5, 0));
        let snap = env.snapshot().unwrap();
        let branch = env.restore(snap).unwrap();
        // A handle from the parent env is foreign to the branch.
        assert!(matches!(branch.restore(snap), Err(ActorError::StaleSnapshot)));
        // Unknown snapshot id on the right env is also stale.
        let bogus = SnapshotHandle {
            env_uid: snap.env_uid,
            snap_id: 999,
        };
        assert!(matches!(env.restore(bogus), Err(ActorError::StaleSnapshot)));
    }

    #[test]
    fn recoverable_failures_never_raise() {
        let mut env = SimEnv::new(make_task(6, 1));
        for action in [
            Action::view("missing.py", 1, 5),
            Action::view("src/does/not/exist.py", 3, 1),
            Action::edit("missing.py", "a", "b"),
            Action::edit(&env.task().bug_path.clone(), "absent-string", "x"),
            Action::run_script("never_created.py"),
            Action::command("cd src && grep -rn result"),
        ] {
            let obs = env.execute(&state(), &action).unwrap();
            assert!(obs.error_tag.is_some(), "{} must be an error observation", action.raw_text);
        }
    }

    proptest! {
        // Snapshot fidelity: replay from a restored branch matches in-place
        // replay observation-for-observation, for any action sequence.
        #[test]
        fn snapshot_replay_equals_inplace_replay(ops in proptest::collection::vec(0usize..6, 1..12), seed in 0u64..500) {
            let task = make_task(seed, 1);
            let path = task.bug_path.clone();
            let (buggy, correct) = (task.buggy_line.clone(), task.correct_line.clone());
            let actions: Vec<Action> = ops.iter().map(|&op| match op {
                0 => Action::ls(),
                1 => Action::run_tests(),
                2 => Action::view(&path, 1, 3),
                3 => Action::edit(&path, &buggy, &correct),
                4 => Action::create_script("reproduce_error.py", "print('check')"),
                _ => Action::run_script("reproduce_error.py"),
            }).collect();

            let st = State::new("t", "p");
            let mut main_env = SimEnv::new(task.clone());
            let snap = main_env.snapshot().unwrap();
            let mut branch = main_env.restore(snap).unwrap();

            for action in &actions {
                let a = main_env.execute(&st, action).unwrap();
                let b = branch.execute(&st, action).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
