//! Rubric configuration, judge prompt assembly, verdict parsing, weighted
//! scoring, and the pairwise segment tournament.
//!
//! Prompt assembly is pure: equal inputs yield byte-identical prompts, which
//! the golden-file tests rely on. Verdict parsing takes the LAST occurrence
//! of a conclusion token, because reasoning-style judges tend to restate
//! candidates early in their output.

use crate::seeds;
use crate::trajectory::{Action, State, Step};
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Shipped turn-level prompt template.
pub const TURN_PROMPT_TEMPLATE: &str = include_str!("../assets/turn_prompt.txt");
/// Shipped segment-pair prompt template.
pub const PAIR_PROMPT_TEMPLATE: &str = include_str!("../assets/pair_prompt.txt");
/// Shipped turn-level rubric set.
pub const DEFAULT_TURN_RUBRICS: &str = include_str!("../assets/rubrics_turn.toml");
/// Shipped segment-level rubric set.
pub const DEFAULT_SEGMENT_RUBRICS: &str = include_str!("../assets/rubrics_segment.toml");

/// Absolute tolerance for the weights-sum-to-one check.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("rubric config is not valid TOML: {0}")]
    Config(String),
    #[error("rubric set is empty")]
    EmptySet,
    #[error("duplicate rubric id `{0}`")]
    DuplicateId(String),
    #[error("rubric `{id}` has weight {weight}, expected a value in (0, 1]")]
    WeightOutOfRange { id: String, weight: f64 },
    #[error("rubric weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}")]
    WeightSum { sum: f64 },
    #[error("need at least 2 candidates to judge, got {0}")]
    TooFewCandidates(usize),
    #[error("segment candidate is empty")]
    EmptySegment,
    #[error("no conclusion token found in judge output")]
    UnparseableVerdict,
    #[error("judge chose candidate {winner} but only {n} were presented")]
    WinnerOutOfRange { winner: usize, n: usize },
    #[error("scores and weights differ in length: {scores} vs {weights}")]
    LengthMismatch { scores: usize, weights: usize },
}

/// One weighted human-authored evaluation criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub id: String,
    pub title: String,
    pub weight: f64,
    pub body: String,
}

/// An ordered, validated set of rubrics whose weights sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RubricSetDoc")]
pub struct RubricSet {
    rubrics: Vec<Rubric>,
}

#[derive(Deserialize)]
struct RubricSetDoc {
    #[serde(rename = "rubric")]
    rubrics: Vec<Rubric>,
}

impl TryFrom<RubricSetDoc> for RubricSet {
    type Error = RubricError;
    fn try_from(doc: RubricSetDoc) -> Result<Self, RubricError> {
        RubricSet::new(doc.rubrics)
    }
}

impl RubricSet {
    /// Validate and wrap a rubric list. Out-of-tolerance weights are an
    /// error, never auto-normalized.
    pub fn new(rubrics: Vec<Rubric>) -> Result<Self, RubricError> {
        if rubrics.is_empty() {
            return Err(RubricError::EmptySet);
        }
        let mut seen = std::collections::HashSet::new();
        for r in &rubrics {
            if !seen.insert(r.id.clone()) {
                return Err(RubricError::DuplicateId(r.id.clone()));
            }
            if !(r.weight > 0.0 && r.weight <= 1.0) {
                return Err(RubricError::WeightOutOfRange {
                    id: r.id.clone(),
                    weight: r.weight,
                });
            }
        }
        let sum: f64 = rubrics.iter().map(|r| r.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(RubricError::WeightSum { sum });
        }
        Ok(RubricSet { rubrics })
    }

    pub fn rubrics(&self) -> &[Rubric] {
        &self.rubrics
    }

    pub fn len(&self) -> usize {
        self.rubrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rubrics.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rubrics.iter().map(|r| r.weight).collect()
    }

    /// The shipped turn-level rubric set.
    pub fn default_turn() -> Self {
        load_rubrics(DEFAULT_TURN_RUBRICS).expect("shipped turn rubrics are valid")
    }

    /// The shipped segment-level rubric set.
    pub fn default_segment() -> Self {
        load_rubrics(DEFAULT_SEGMENT_RUBRICS).expect("shipped segment rubrics are valid")
    }
}

/// Parse and validate a rubric config document (TOML).
pub fn load_rubrics(document: &str) -> Result<RubricSet, RubricError> {
    let doc: RubricSetDoc =
        toml::from_str(document).map_err(|e| RubricError::Config(e.to_string()))?;
    RubricSet::new(doc.rubrics)
}

/// Task-side references handed to the judge alongside candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideInfo {
    pub ground_truth_patch: String,
    pub task_statement: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub extra_notes: Option<String>,
}

/// Parsed turn-level judge output. The conclusion line is the selection
/// authority; per-rubric scores and stated totals are advisory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnVerdict {
    /// 1-based, as written in the conclusion format.
    pub winner_index: usize,
    pub scores: Option<Vec<Vec<u8>>>,
    pub weighted_totals: Option<Vec<f64>>,
    pub raw_text: String,
}

impl TurnVerdict {
    /// 0-based index of the selected candidate.
    pub fn selected(&self) -> usize {
        self.winner_index - 1
    }
}

/// Parsed segment-pair judge output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub first_wins: bool,
    pub raw_text: String,
}

fn render_history(steps: &[Step]) -> String {
    if steps.iter().all(Step::is_null) {
        return "(no prior interaction)".to_string();
    }
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        if step.is_null() {
            continue;
        }
        out.push_str(&format!(
            "[Step {}]\nAssistant action:\n{}\nExecution result:\n{}\n\n",
            i + 1,
            step.action.raw_text,
            if step.observation.is_null {
                "(none)"
            } else {
                &step.observation.raw_text
            }
        ));
    }
    out.trim_end().to_string()
}

fn render_rubrics(rubrics: &RubricSet) -> String {
    let mut out = String::new();
    for (i, r) in rubrics.rubrics().iter().enumerate() {
        out.push_str(&format!(
            "Rubric {}: {} (Weight: {}%)\n{}\n\n",
            i + 1,
            r.title,
            format_weight_pct(r.weight),
            r.body.trim_end()
        ));
    }
    out.trim_end().to_string()
}

fn format_weight_pct(weight: f64) -> String {
    let pct = weight * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

fn render_instruction(initial_prompt: &str, side: &SideInfo) -> String {
    match &side.extra_notes {
        Some(notes) => format!("{initial_prompt}\n\nAdditional notes:\n{notes}"),
        None => initial_prompt.to_string(),
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Assemble the turn-level judge prompt for N unexecuted candidate actions.
///
/// Section order: agent instruction, ground-truth patch, interaction history,
/// rubrics, candidates; the conclusion-format instruction closes the prompt.
pub fn assemble_turn_prompt(
    state: &State,
    candidates: &[Action],
    side: &SideInfo,
    rubrics: &RubricSet,
) -> Result<String, RubricError> {
    if candidates.len() < 2 {
        return Err(RubricError::TooFewCandidates(candidates.len()));
    }
    let mut rendered = String::new();
    for (i, action) in candidates.iter().enumerate() {
        rendered.push_str(&format!("### Action {}\n{}\n\n", i + 1, action.raw_text));
    }
    Ok(fill(
        TURN_PROMPT_TEMPLATE,
        &[
            ("candidate_count", &candidates.len().to_string()),
            ("instruction", &render_instruction(&state.initial_prompt, side)),
            ("patch", side.ground_truth_patch.trim_end()),
            ("history", &render_history(state.history())),
            ("rubrics", &render_rubrics(rubrics)),
            ("candidates", rendered.trim_end()),
        ],
    ))
}

fn render_segment(steps: &[Step]) -> String {
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        out.push_str(&format!(
            "Action {}:\n{}\nExecution result:\n{}\n",
            i + 1,
            step.action.raw_text,
            if step.observation.is_null {
                "(none)"
            } else {
                &step.observation.raw_text
            }
        ));
    }
    out.trim_end().to_string()
}

/// Assemble the segment-pair judge prompt for two executed continuations of
/// the same prefix. Pair prompts always present exactly two candidates.
pub fn assemble_pair_prompt(
    prefix: &State,
    first: &[Step],
    second: &[Step],
    side: &SideInfo,
    rubrics: &RubricSet,
) -> Result<String, RubricError> {
    if first.is_empty() || second.is_empty() {
        return Err(RubricError::EmptySegment);
    }
    let candidates = format!(
        "### Trajectory 1\n{}\n\n### Trajectory 2\n{}",
        render_segment(first),
        render_segment(second)
    );
    Ok(fill(
        PAIR_PROMPT_TEMPLATE,
        &[
            ("candidate_count", "2"),
            ("instruction", &render_instruction(&prefix.initial_prompt, side)),
            ("patch", side.ground_truth_patch.trim_end()),
            ("history", &render_history(prefix.history())),
            ("rubrics", &render_rubrics(rubrics)),
            ("candidates", &candidates),
        ],
    ))
}

fn conclusion_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"ACTION\s+(\d+)\s+WINS").expect("static regex"))
}

fn action_scores_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)action\s+(\d+)\s*:\s*rubric scores\s*\[([0-9,\s]+)\](?:\s*->\s*weighted total\s+([0-9.]+))?")
            .expect("static regex")
    })
}

/// Parse a turn-level verdict: the LAST `ACTION i WINS` occurrence decides;
/// per-rubric scores and stated totals are extracted best-effort.
pub fn parse_turn_verdict(raw: &str, n: usize) -> Result<TurnVerdict, RubricError> {
    let caps = conclusion_re()
        .captures_iter(raw)
        .last()
        .ok_or(RubricError::UnparseableVerdict)?;
    let winner: usize = caps[1].parse().map_err(|_| RubricError::UnparseableVerdict)?;
    if winner < 1 || winner > n {
        return Err(RubricError::WinnerOutOfRange { winner, n });
    }

    let mut scores: Vec<Option<Vec<u8>>> = vec![None; n];
    let mut totals: Vec<Option<f64>> = vec![None; n];
    for caps in action_scores_re().captures_iter(raw) {
        let Ok(idx) = caps[1].parse::<usize>() else { continue };
        if idx < 1 || idx > n {
            continue;
        }
        let parsed: Option<Vec<u8>> = caps[2]
            .split(',')
            .map(|s| s.trim().parse::<u8>().ok().filter(|v| *v <= 4))
            .collect();
        if let Some(list) = parsed {
            scores[idx - 1] = Some(list);
        }
        if let Some(total) = caps.get(3) {
            totals[idx - 1] = total.as_str().parse().ok();
        }
    }
    let scores: Option<Vec<Vec<u8>>> = scores.into_iter().collect();
    let totals: Option<Vec<f64>> = totals.into_iter().collect();

    Ok(TurnVerdict {
        winner_index: winner,
        scores,
        weighted_totals: totals,
        raw_text: raw.to_string(),
    })
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex"))
}

/// Parse a pair verdict: last case-insensitive, word-bounded YES/NO token.
pub fn parse_pair_verdict(raw: &str) -> Result<PairVerdict, RubricError> {
    let caps = yes_no_re()
        .captures_iter(raw)
        .last()
        .ok_or(RubricError::UnparseableVerdict)?;
    Ok(PairVerdict {
        first_wins: caps[1].eq_ignore_ascii_case("yes"),
        raw_text: raw.to_string(),
    })
}

/// Weighted aggregate of per-rubric scores: sum(score_i * weight_i).
pub fn weighted_score(scores: &[u8], weights: &[f64]) -> Result<f64, RubricError> {
    if scores.len() != weights.len() {
        return Err(RubricError::LengthMismatch {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(weights)
        .map(|(s, w)| f64::from(*s) * w)
        .sum())
}

/// Argmax over weighted totals; ties break to the lowest index.
pub fn select_turn_winner(totals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &t) in totals.iter().enumerate().skip(1) {
        if t > totals[best] {
            best = i;
        }
    }
    best
}

/// One pair decision in presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDecision {
    /// Candidate shown first.
    pub first: usize,
    /// Candidate shown second.
    pub second: usize,
    pub first_wins: bool,
}

/// Tournament outcome: the winner plus every recorded decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TournamentResult {
    pub winner: usize,
    pub wins: Vec<usize>,
    pub decisions: Vec<PairDecision>,
}

/// Judge every unordered pair among `n` candidates exactly once and return
/// the index with the most wins (ties to the lowest index).
///
/// The presentation order of each pair is flipped by a seed derived from the
/// pair itself, so position bias is mitigated and results do not depend on
/// judging order. Pair judgments run concurrently under the `parallel`
/// feature; `judge(a, b)` must return whether the first-presented candidate
/// `a` beats `b`.
pub fn run_pairwise_tournament<E, F>(
    n: usize,
    seed: u64,
    judge: F,
) -> Result<TournamentResult, E>
where
    E: Send,
    F: Fn(usize, usize) -> Result<bool, E> + Send + Sync,
{
    if n == 0 {
        return Ok(TournamentResult {
            winner: 0,
            wins: Vec::new(),
            decisions: Vec::new(),
        });
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let flip_seed =
                seeds::derive_path(seed, &[seeds::stream::PAIR_ORDER, i as u64, j as u64]);
            let flipped = seeds::rng(flip_seed).gen::<bool>();
            let (first, second) = if flipped { (j, i) } else { (i, j) };
            pairs.push((first, second));
        }
    }
    let outcomes = crate::par::map_ref(&pairs, |&(first, second)| {
        judge(first, second).map(|first_wins| PairDecision {
            first,
            second,
            first_wins,
        })
    });
    let mut decisions = Vec::with_capacity(pairs.len());
    for outcome in outcomes {
        decisions.push(outcome?);
    }
    let mut wins = vec![0usize; n];
    for d in &decisions {
        wins[if d.first_wins { d.first } else { d.second }] += 1;
    }
    let mut winner = 0;
    for (i, &w) in wins.iter().enumerate().skip(1) {
        if w > wins[winner] {
            winner = i;
        }
    }
    Ok(TournamentResult {
        winner,
        wins,
        decisions,
    })
}
