//! Behavioral pattern analysis over trajectory corpora: test/reproduction
//! behaviors, recoverable-error rates, and turn-efficiency statistics.
//!
//! Behavior detection is keyword matching over action text and tool
//! arguments. Error detection trusts the environment's `error_tag` first and
//! falls back to observation-text patterns for corpora imported from other
//! harnesses. Null padding never counts in any numerator or denominator.

use crate::trajectory::{ErrorTag, Step, Trajectory};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shipped default pattern registry.
pub const DEFAULT_REGISTRY: &str = include_str!("../assets/registry_default.toml");

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("registry config is not valid TOML: {0}")]
    Config(String),
    #[error("pattern class `{class}` is empty")]
    EmptyClass { class: String },
    #[error("pattern `{pattern}` in class `{class}` does not compile: {message}")]
    BadPattern {
        class: String,
        pattern: String,
        message: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// The three recoverable-error categories tracked by the reports, in
/// priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    PathNotFound,
    InvalidViewRange,
    ReplaceFailed,
}

impl ErrorCategory {
    fn from_tag(tag: ErrorTag) -> Option<Self> {
        match tag {
            ErrorTag::PathNotFound => Some(ErrorCategory::PathNotFound),
            ErrorTag::InvalidViewRange => Some(ErrorCategory::InvalidViewRange),
            ErrorTag::ReplaceFailed => Some(ErrorCategory::ReplaceFailed),
            ErrorTag::OtherError => None,
        }
    }
}

/// Per-trajectory behavior flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorFlags {
    pub created_test: bool,
    pub created_repro: bool,
    pub ran_test: bool,
    pub ran_repro: bool,
}

#[derive(Debug, Deserialize)]
struct RegistryDoc {
    #[serde(default)]
    registry_version: u32,
    behaviors: BehaviorPatternsDoc,
    errors: ErrorPatternsDoc,
}

#[derive(Debug, Deserialize)]
struct BehaviorPatternsDoc {
    create_test: Vec<String>,
    create_repro: Vec<String>,
    run_test: Vec<String>,
    run_repro: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ErrorPatternsDoc {
    path_not_found: Vec<String>,
    invalid_view_range: Vec<String>,
    replace_failed: Vec<String>,
}

/// Compiled keyword patterns for behavior and error detection.
#[derive(Debug)]
pub struct PatternRegistry {
    pub registry_version: u32,
    create_test: Vec<Regex>,
    create_repro: Vec<Regex>,
    run_test: Vec<Regex>,
    run_repro: Vec<Regex>,
    path_not_found: Vec<Regex>,
    invalid_view_range: Vec<Regex>,
    replace_failed: Vec<Regex>,
}

fn compile_class(class: &str, patterns: &[String]) -> Result<Vec<Regex>, AnalyzerError> {
    if patterns.is_empty() {
        return Err(AnalyzerError::EmptyClass {
            class: class.to_string(),
        });
    }
    patterns
        .iter()
        .map(|p| {
            RegexBuilder::new(p)
                .case_insensitive(true)
                .build()
                .map_err(|e| AnalyzerError::BadPattern {
                    class: class.to_string(),
                    pattern: p.clone(),
                    message: e.to_string(),
                })
        })
        .collect()
}

impl PatternRegistry {
    /// Parse and compile a registry config document (TOML).
    pub fn from_toml(document: &str) -> Result<Self, AnalyzerError> {
        let doc: RegistryDoc =
            toml::from_str(document).map_err(|e| AnalyzerError::Config(e.to_string()))?;
        Ok(PatternRegistry {
            registry_version: doc.registry_version,
            create_test: compile_class("create_test", &doc.behaviors.create_test)?,
            create_repro: compile_class("create_repro", &doc.behaviors.create_repro)?,
            run_test: compile_class("run_test", &doc.behaviors.run_test)?,
            run_repro: compile_class("run_repro", &doc.behaviors.run_repro)?,
            path_not_found: compile_class("path_not_found", &doc.errors.path_not_found)?,
            invalid_view_range: compile_class(
                "invalid_view_range",
                &doc.errors.invalid_view_range,
            )?,
            replace_failed: compile_class("replace_failed", &doc.errors.replace_failed)?,
        })
    }

    /// The shipped default registry (matches the simulator's fixed messages).
    pub fn default_registry() -> Self {
        Self::from_toml(DEFAULT_REGISTRY).expect("shipped registry is valid")
    }

    fn classify_text(&self, text: &str) -> Option<ErrorCategory> {
        // Priority order: path, view-range, replace.
        if self.path_not_found.iter().any(|re| re.is_match(text)) {
            return Some(ErrorCategory::PathNotFound);
        }
        if self.invalid_view_range.iter().any(|re| re.is_match(text)) {
            return Some(ErrorCategory::InvalidViewRange);
        }
        if self.replace_failed.iter().any(|re| re.is_match(text)) {
            return Some(ErrorCategory::ReplaceFailed);
        }
        None
    }
}

fn action_haystack(step: &Step) -> String {
    let mut text = step.action.raw_text.clone();
    for value in step.action.arguments.values() {
        text.push(' ');
        text.push_str(value);
    }
    text
}

/// Flag behaviors in one trajectory: a flag is set iff any non-null step's
/// action text or tool arguments match any pattern of that class.
pub fn detect_behaviors(trajectory: &Trajectory, registry: &PatternRegistry) -> BehaviorFlags {
    let mut flags = BehaviorFlags::default();
    for step in trajectory.real_steps() {
        let haystack = action_haystack(step);
        flags.created_test |= registry.create_test.iter().any(|re| re.is_match(&haystack));
        flags.created_repro |= registry.create_repro.iter().any(|re| re.is_match(&haystack));
        flags.ran_test |= registry.run_test.iter().any(|re| re.is_match(&haystack));
        flags.ran_repro |= registry.run_repro.iter().any(|re| re.is_match(&haystack));
    }
    flags
}

/// Classify each step's recoverable error, if any; aligned with `steps`.
/// The environment's `error_tag` is authoritative; text patterns apply only
/// when the tag is absent. Null steps are always `None`.
pub fn detect_errors(
    trajectory: &Trajectory,
    registry: &PatternRegistry,
) -> Vec<Option<ErrorCategory>> {
    trajectory
        .steps
        .iter()
        .map(|step| {
            if step.is_null() {
                return None;
            }
            match step.observation.error_tag {
                Some(tag) => ErrorCategory::from_tag(tag),
                None => registry.classify_text(&step.observation.raw_text),
            }
        })
        .collect()
}

/// Step counts per error category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub path_not_found: usize,
    pub invalid_view_range: usize,
    pub replace_failed: usize,
}

impl ErrorBreakdown {
    fn bump(&mut self, category: ErrorCategory) {
        match category {
            ErrorCategory::PathNotFound => self.path_not_found += 1,
            ErrorCategory::InvalidViewRange => self.invalid_view_range += 1,
            ErrorCategory::ReplaceFailed => self.replace_failed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.path_not_found + self.invalid_view_range + self.replace_failed
    }
}

/// Corpus-level aggregates over behaviors, errors, and turn counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub trajectory_count: usize,
    pub created_test_ratio: f64,
    pub created_repro_ratio: f64,
    pub ran_test_ratio: f64,
    pub ran_repro_ratio: f64,
    /// Fraction of trajectories containing at least one error step.
    pub task_error_rate: f64,
    /// Error steps over all non-null steps in the corpus.
    pub turn_error_rate: f64,
    /// Mean non-null step count (a finish action counts as a turn).
    pub avg_turns: f64,
    pub error_breakdown: ErrorBreakdown,
    pub total_real_steps: usize,
}

/// Compute corpus metrics; errors on an empty corpus.
pub fn corpus_metrics(
    corpus: &[Trajectory],
    registry: &PatternRegistry,
) -> Result<CorpusReport, AnalyzerError> {
    if corpus.is_empty() {
        return Err(AnalyzerError::EmptyCorpus);
    }
    let per_traj: Vec<(BehaviorFlags, Vec<Option<ErrorCategory>>, usize)> =
        crate::par::map_ref(corpus, |traj| {
            (
                detect_behaviors(traj, registry),
                detect_errors(traj, registry),
                traj.real_length,
            )
        });

    let count = corpus.len() as f64;
    let mut flags_sum = [0usize; 4];
    let mut trajs_with_error = 0usize;
    let mut error_steps = 0usize;
    let mut breakdown = ErrorBreakdown::default();
    let mut total_real = 0usize;
    for (flags, errors, real_len) in &per_traj {
        flags_sum[0] += usize::from(flags.created_test);
        flags_sum[1] += usize::from(flags.created_repro);
        flags_sum[2] += usize::from(flags.ran_test);
        flags_sum[3] += usize::from(flags.ran_repro);
        let step_errors: Vec<ErrorCategory> = errors.iter().flatten().copied().collect();
        if !step_errors.is_empty() {
            trajs_with_error += 1;
        }
        error_steps += step_errors.len();
        for category in step_errors {
            breakdown.bump(category);
        }
        total_real += real_len;
    }

    Ok(CorpusReport {
        trajectory_count: corpus.len(),
        created_test_ratio: flags_sum[0] as f64 / count,
        created_repro_ratio: flags_sum[1] as f64 / count,
        ran_test_ratio: flags_sum[2] as f64 / count,
        ran_repro_ratio: flags_sum[3] as f64 / count,
        task_error_rate: trajs_with_error as f64 / count,
        turn_error_rate: if total_real == 0 {
            0.0
        } else {
            error_steps as f64 / total_real as f64
        },
        avg_turns: total_real as f64 / count,
        error_breakdown: breakdown,
        total_real_steps: total_real,
    })
}

/// One metric row across named reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub values: Vec<f64>,
    /// Deltas against the first column; present when comparing 2+ reports.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deltas: Option<Vec<f64>>,
    pub integer: bool,
}

/// Aligned comparison of one or more corpus reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Build a comparison table; column order follows the input order.
pub fn compare_reports(reports: &[(String, CorpusReport)]) -> ComparisonTable {
    let columns: Vec<String> = reports.iter().map(|(name, _)| name.clone()).collect();
    let metric =
        |name: &str, get: &dyn Fn(&CorpusReport) -> f64, integer: bool| -> TableRow {
            let values: Vec<f64> = reports.iter().map(|(_, r)| get(r)).collect();
            let deltas = (values.len() >= 2)
                .then(|| values[1..].iter().map(|v| v - values[0]).collect());
            TableRow {
                metric: name.to_string(),
                values,
                deltas,
                integer,
            }
        };
    let rows = vec![
        metric("trajectories", &|r| r.trajectory_count as f64, true),
        metric("created_test_ratio", &|r| r.created_test_ratio, false),
        metric("created_repro_ratio", &|r| r.created_repro_ratio, false),
        metric("ran_test_ratio", &|r| r.ran_test_ratio, false),
        metric("ran_repro_ratio", &|r| r.ran_repro_ratio, false),
        metric("task_error_rate", &|r| r.task_error_rate, false),
        metric("turn_error_rate", &|r| r.turn_error_rate, false),
        metric("avg_turns", &|r| r.avg_turns, false),
        metric(
            "errors_path_not_found",
            &|r| r.error_breakdown.path_not_found as f64,
            true,
        ),
        metric(
            "errors_invalid_view_range",
            &|r| r.error_breakdown.invalid_view_range as f64,
            true,
        ),
        metric(
            "errors_replace_failed",
            &|r| r.error_breakdown.replace_failed as f64,
            true,
        ),
    ];
    ComparisonTable { columns, rows }
}

fn format_value(value: f64, integer: bool) -> String {
    if integer {
        format!("{}", value as i64)
    } else {
        format!("{value:.3}")
    }
}

fn format_delta(value: f64, integer: bool) -> String {
    if integer {
        format!("{:+}", value as i64)
    } else {
        format!("{value:+.3}")
    }
}

impl ComparisonTable {
    /// Render an aligned plain-text table, deterministically.
    pub fn render_text(&self) -> String {
        let mut headers = vec!["metric".to_string()];
        headers.extend(self.columns.iter().cloned());
        if self.columns.len() >= 2 {
            for name in &self.columns[1..] {
                headers.push(format!("d({name})"));
            }
        }
        let mut grid: Vec<Vec<String>> = vec![headers];
        for row in &self.rows {
            let mut cells = vec![row.metric.clone()];
            for v in &row.values {
                cells.push(format_value(*v, row.integer));
            }
            if let Some(deltas) = &row.deltas {
                for d in deltas {
                    cells.push(format_delta(*d, row.integer));
                }
            }
            grid.push(cells);
        }
        let cols = grid.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| grid.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    line.push_str(&format!("{cell:<width$}", width = widths[0]));
                } else {
                    line.push_str(&format!("  {cell:>width$}", width = widths[c]));
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}
