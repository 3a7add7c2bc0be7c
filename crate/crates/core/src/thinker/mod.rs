//! Contrastive in-context prompt composition and the solving loops over it.
//!
//! A prompt is assembled from named template sections: a task instruction,
//! optional SQL constraints, retrieved success and failure exemplars, and the
//! new case itself. [`compose_prompt`] builds the single-turn prompt,
//! [`solve_single_round`] and [`solve_two_round`] run it against a gateway,
//! and [`bootstrap`] alternates retrieval and generation over several rounds,
//! feeding each answer back into the next retrieval query.

mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::gateway::{
    render_transcript, AnswerFormat, ChatTurn, Gateway, GatewayError, SamplingParams,
};
use crate::retrieve::{retrieve_contrastive, ContrastiveSet, RetrievalError};
use crate::store::{ExperienceEntry, MemoryDataset, VectorIndex};

/// Which exemplar sides a composed prompt presents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Plain examples without success or failure framing.
    Fixed,
    /// Success exemplars only.
    PosOnly,
    /// Failure exemplars only.
    NegOnly,
    /// Success and failure exemplars in one prompt.
    PosNegSingle,
    /// Success exemplars first, failure exemplars in a second round; built by
    /// [`solve_two_round`], not by [`compose_prompt`].
    PosNegTwoRound,
}

/// Task family a prompt targets; selects labels, tails, and answer format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Text2Sql,
    Tableqa,
}

impl TaskKind {
    fn key(self) -> &'static str {
        match self {
            TaskKind::Text2Sql => "text2sql",
            TaskKind::Tableqa => "tableqa",
        }
    }

    /// Answer shape the generator is expected to produce for this task.
    pub fn answer_format(self) -> AnswerFormat {
        match self {
            TaskKind::Text2Sql => AnswerFormat::Sql,
            TaskKind::Tableqa => AnswerFormat::Freeform,
        }
    }
}

/// Declarative prompt settings, typically the `[plan]` config section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptPlan {
    pub mode: PromptMode,
    /// Exemplars per side; zero composes a bare zero-shot prompt.
    pub shots_n: usize,
    pub task_kind: TaskKind,
    /// Render the SQL constraints block (text-to-SQL prompts only).
    pub include_constraints: bool,
    /// Byte budget for the rendered prompt. When exceeded, exemplars are
    /// dropped from the end of the lists (failures first on ties) until the
    /// prompt fits; a zero-shot prompt is returned as-is even when over.
    pub max_render_len: Option<usize>,
}

impl Default for PromptPlan {
    fn default() -> Self {
        PromptPlan {
            mode: PromptMode::PosNegSingle,
            shots_n: 1,
            task_kind: TaskKind::Text2Sql,
            include_constraints: true,
            max_render_len: None,
        }
    }
}

/// What a composed prompt was filled with: the new case plus the ids of the
/// exemplars that survived shot selection and the render budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSlots {
    pub question: String,
    pub evidence: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

/// A ready-to-send prompt with a digest of its rendered form.
#[derive(Debug, Clone)]
pub struct ComposedPrompt {
    pub turns: Vec<ChatTurn>,
    pub rendered_digest: String,
    pub slots: PromptSlots,
}

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("evidence must be non-empty")]
    MissingEvidence,
    #[error("not enough {side} exemplars: need {needed}, have {available}")]
    NotEnoughShots { side: &'static str, needed: usize, available: usize },
    #[error("invalid prompt plan: {0}")]
    InvalidPlan(String),
    #[error("prompt template error: {0}")]
    Template(String),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("prompt composition failed: {0}")]
    Compose(#[from] ComposeError),
    #[error("generation failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
}

/// Result of a single-round solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// The extracted answer (SQL text or the freeform answer line).
    pub answer: String,
    /// The raw completion the answer was extracted from.
    pub raw: String,
    pub rendered_digest: String,
    /// Full transcript including the assistant reply.
    pub turns: Vec<ChatTurn>,
}

/// Result of a two-round solve: positives first, failures as a follow-up.
#[derive(Debug, Clone)]
pub struct TwoRoundOutcome {
    /// The answer to keep: the second-round answer when that round succeeded,
    /// otherwise the first-round answer.
    pub answer: String,
    pub first_answer: String,
    pub second_answer: Option<String>,
    /// Whether the second round produced the kept answer.
    pub corrected: bool,
    pub turns: Vec<ChatTurn>,
}

/// Result of iterative retrieve-and-refine solving.
#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    /// One answer per completed round, first round first.
    pub answers: Vec<String>,
    pub turns: Vec<ChatTurn>,
    /// False when a later round failed and the history was cut short.
    pub completed: bool,
}

/// Composes the contrastive prompt for one question as a single user turn.
///
/// `cset` supplies the exemplars; the plan decides which sides appear and how
/// many shots each side gets. Entries may appear on both sides when the
/// retrieval ranks overlap.
pub fn compose_prompt(
    question: &str,
    evidence: &str,
    cset: &ContrastiveSet,
    plan: &PromptPlan,
) -> Result<ComposedPrompt, ComposeError> {
    if plan.mode == PromptMode::PosNegTwoRound {
        return Err(ComposeError::InvalidPlan(
            "pos_neg_two_round prompts are built by solve_two_round".into(),
        ));
    }
    if question.trim().is_empty() {
        return Err(ComposeError::InvalidPlan("question must be non-empty".into()));
    }
    if evidence.trim().is_empty() {
        return Err(ComposeError::MissingEvidence);
    }
    let (want_pos, want_neg) = side_requirements(plan.mode);
    let mut pos_n = if want_pos { plan.shots_n } else { 0 };
    let mut neg_n = if want_neg { plan.shots_n } else { 0 };
    require_shots("positive", pos_n, cset.positives.len())?;
    require_shots("negative", neg_n, cset.negatives.len())?;
    loop {
        let positives = &cset.positives[..pos_n];
        let negatives = &cset.negatives[..neg_n];
        let body = render_body(question, evidence, plan, positives, negatives)?;
        let fits = plan.max_render_len.is_none_or(|cap| body.len() <= cap);
        if fits || pos_n + neg_n == 0 {
            let turns = vec![ChatTurn::user(body)];
            return Ok(ComposedPrompt {
                rendered_digest: sha256_hex(render_transcript(&turns).as_bytes()),
                slots: PromptSlots {
                    question: question.to_string(),
                    evidence: evidence.to_string(),
                    positives: positives.iter().map(|e| e.id.clone()).collect(),
                    negatives: negatives.iter().map(|e| e.id.clone()).collect(),
                },
                turns,
            });
        }
        if neg_n >= pos_n && neg_n > 0 {
            neg_n -= 1;
        } else {
            pos_n -= 1;
        }
    }
}

/// Composes the prompt and asks the gateway for the final answer.
pub fn solve_single_round(
    gateway: &Gateway,
    question: &str,
    evidence: &str,
    cset: &ContrastiveSet,
    plan: &PromptPlan,
) -> Result<SolveOutcome, SolveError> {
    let prompt = compose_prompt(question, evidence, cset, plan)?;
    let mut turns = prompt.turns;
    let reply = gateway.generate_final_answer(
        &turns,
        plan.task_kind.answer_format(),
        &SamplingParams::greedy(),
    )?;
    turns.push(ChatTurn::assistant(reply.raw.clone()));
    Ok(SolveOutcome {
        answer: reply.extracted,
        raw: reply.raw,
        rendered_digest: prompt.rendered_digest,
        turns,
    })
}

/// Presents success exemplars in round one, then failure exemplars in a
/// follow-up turn asking the generator to reconsider. A second-round failure
/// is not fatal: the first answer is kept and flagged as uncorrected.
pub fn solve_two_round(
    gateway: &Gateway,
    question: &str,
    evidence: &str,
    cset: &ContrastiveSet,
    plan: &PromptPlan,
) -> Result<TwoRoundOutcome, SolveError> {
    if plan.mode != PromptMode::PosNegTwoRound {
        return Err(ComposeError::InvalidPlan(
            "solve_two_round requires mode pos_neg_two_round".into(),
        )
        .into());
    }
    if plan.shots_n == 0 {
        return Err(
            ComposeError::InvalidPlan("two-round solving needs at least one shot".into()).into()
        );
    }
    require_shots("negative", plan.shots_n, cset.negatives.len())?;
    let round_one = PromptPlan { mode: PromptMode::PosOnly, ..plan.clone() };
    let prompt = compose_prompt(question, evidence, cset, &round_one)?;
    let mut turns = prompt.turns;
    let format = plan.task_kind.answer_format();
    let first = gateway.generate_final_answer(&turns, format, &SamplingParams::greedy())?;
    turns.push(ChatTurn::assistant(first.raw.clone()));

    let follow_up = PromptPlan { mode: PromptMode::NegOnly, ..plan.clone() };
    turns.push(ChatTurn::user(refinement_turn(&follow_up, cset, "two_round")?));
    match gateway.generate_final_answer(&turns, format, &SamplingParams::greedy()) {
        Ok(second) => {
            turns.push(ChatTurn::assistant(second.raw));
            Ok(TwoRoundOutcome {
                answer: second.extracted.clone(),
                first_answer: first.extracted,
                second_answer: Some(second.extracted),
                corrected: true,
                turns,
            })
        }
        Err(err) => {
            log::warn!("second round failed, keeping the first answer: {err}");
            Ok(TwoRoundOutcome {
                answer: first.extracted.clone(),
                first_answer: first.extracted,
                second_answer: None,
                corrected: false,
                turns,
            })
        }
    }
}

/// Solves iteratively: each round appends fresh exemplars retrieved with the
/// question plus the previous answer, then asks again. Returns one answer per
/// completed round. A failure after the first round truncates the history and
/// clears `completed`; a first-round failure is an error.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap(
    gateway: &Gateway,
    dataset: &MemoryDataset,
    index: &VectorIndex,
    question: &str,
    evidence: &str,
    plan: &PromptPlan,
    iterations: usize,
    k: usize,
    n: usize,
) -> Result<BootstrapOutcome, SolveError> {
    if plan.mode == PromptMode::PosNegTwoRound {
        return Err(ComposeError::InvalidPlan(
            "bootstrap refines with single-round prompts; use a single-round mode".into(),
        )
        .into());
    }
    let cset = retrieve_contrastive(question, gateway, dataset, index, k, n)?;
    let first = solve_single_round(gateway, question, evidence, &cset, plan)?;
    let mut turns = first.turns;
    let mut answers = vec![first.answer];
    let format = plan.task_kind.answer_format();
    for round in 1..=iterations {
        let query = format!("{question}\n{}", answers.last().expect("at least one answer"));
        let update = retrieve_contrastive(&query, gateway, dataset, index, k, n)
            .map_err(SolveError::from)
            .and_then(|fresh| refinement_turn(plan, &fresh, "bootstrap").map_err(SolveError::from));
        let update = match update {
            Ok(update) => update,
            Err(err) => {
                log::warn!("bootstrap round {round} could not build its update: {err}");
                return Ok(BootstrapOutcome { answers, turns, completed: false });
            }
        };
        turns.push(ChatTurn::user(update));
        match gateway.generate_final_answer(&turns, format, &SamplingParams::greedy()) {
            Ok(reply) => {
                turns.push(ChatTurn::assistant(reply.raw));
                answers.push(reply.extracted);
            }
            Err(err) => {
                log::warn!("bootstrap round {round} generation failed: {err}");
                turns.pop();
                return Ok(BootstrapOutcome { answers, turns, completed: false });
            }
        }
    }
    Ok(BootstrapOutcome { answers, turns, completed: true })
}

/// Which sides a mode draws exemplars from.
fn side_requirements(mode: PromptMode) -> (bool, bool) {
    match mode {
        PromptMode::Fixed | PromptMode::PosOnly => (true, false),
        PromptMode::NegOnly => (false, true),
        PromptMode::PosNegSingle | PromptMode::PosNegTwoRound => (true, true),
    }
}

fn require_shots(side: &'static str, needed: usize, available: usize) -> Result<(), ComposeError> {
    if needed > available {
        return Err(ComposeError::NotEnoughShots { side, needed, available });
    }
    Ok(())
}

fn render_body(
    question: &str,
    evidence: &str,
    plan: &PromptPlan,
    positives: &[ExperienceEntry],
    negatives: &[ExperienceEntry],
) -> Result<String, ComposeError> {
    let kind = plan.task_kind.key();
    let variant = match (plan.mode, positives.is_empty(), negatives.is_empty()) {
        (_, true, true) => "zero",
        (PromptMode::Fixed, ..) => "fixed",
        (_, false, false) => "both",
        (_, false, true) => "pos",
        (_, true, false) => "neg",
    };
    let mut parts = vec![template::section(&format!("instruction.{kind}.{variant}"))?.to_string()];
    if plan.include_constraints && plan.task_kind == TaskKind::Text2Sql {
        parts.push(template::section("constraints.text2sql")?.to_string());
    }
    if !positives.is_empty() || !negatives.is_empty() {
        parts.push(template::section("memory_header")?.to_string());
        for entry in positives {
            parts.push(exemplar_block(success_block(plan.mode), kind, entry)?);
        }
        for entry in negatives {
            parts.push(exemplar_block("failure", kind, entry)?);
        }
        parts.push(template::section("separator")?.to_string());
    }
    parts.push(template::render(
        template::section(&format!("new_case.{kind}"))?,
        &[("evidence", evidence), ("question", question)],
    )?);
    Ok(parts.join("\n\n"))
}

/// A follow-up user turn: an update directive, exemplar blocks drawn from
/// `cset` per the plan's mode, and the answer tail. Carries no evidence; the
/// original prompt already holds it.
fn refinement_turn(
    plan: &PromptPlan,
    cset: &ContrastiveSet,
    directive: &str,
) -> Result<String, ComposeError> {
    let kind = plan.task_kind.key();
    let (want_pos, want_neg) = side_requirements(plan.mode);
    let pos_n = if want_pos { plan.shots_n } else { 0 };
    let neg_n = if want_neg { plan.shots_n } else { 0 };
    require_shots("positive", pos_n, cset.positives.len())?;
    require_shots("negative", neg_n, cset.negatives.len())?;
    let mut parts = vec![template::section(&format!("update.{directive}.{kind}"))?.to_string()];
    for entry in &cset.positives[..pos_n] {
        parts.push(exemplar_block(success_block(plan.mode), kind, entry)?);
    }
    for entry in &cset.negatives[..neg_n] {
        parts.push(exemplar_block("failure", kind, entry)?);
    }
    parts.push(template::section(&format!("tail.{kind}"))?.to_string());
    Ok(parts.join("\n\n"))
}

/// Fixed mode frames positives as plain examples instead of successes.
fn success_block(mode: PromptMode) -> &'static str {
    if mode == PromptMode::Fixed {
        "example"
    } else {
        "success"
    }
}

fn exemplar_block(block: &str, kind: &str, entry: &ExperienceEntry) -> Result<String, ComposeError> {
    template::render(
        template::section(&format!("exemplar.{block}.{kind}"))?,
        &[
            ("digest", entry.evidence_digest.as_str()),
            ("question", entry.question.as_str()),
            ("answer", entry.answer.as_str()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::gateway::{Backend, BackendConfig, MockBackend, Role};
    use crate::store::build_index;

    const QUESTION: &str = "How many heads of the departments are older than 56?";
    const EVIDENCE: &str = "CREATE TABLE head (head_id int, name text, age int)";

    fn entry(id: &str, question: &str, answer: &str, reward: f64) -> ExperienceEntry {
        ExperienceEntry {
            id: id.to_string(),
            dataset: "custom".to_string(),
            question: question.to_string(),
            answer: answer.to_string(),
            reward,
            depth: 1,
            parent_trace_id: None,
            nl_description: None,
            evidence_digest: format!("{id}-digest"),
        }
    }

    fn four_entries() -> Vec<ExperienceEntry> {
        vec![
            entry("a", "How many heads are older than 60?", "SELECT count(*) FROM head WHERE age > 60", 1.0),
            entry("b", "List singer names by age.", "SELECT name FROM singer ORDER BY age", 0.0),
            entry("c", "Average horsepower before 1980?", "SELECT avg(horsepower) FROM cars WHERE year < 1980", 0.8),
            entry("d", "Which market has the most stalls?", "SELECT market FROM stalls LIMIT 1", 0.2),
        ]
    }

    fn sample_set() -> ContrastiveSet {
        let entries = four_entries();
        ContrastiveSet {
            query: QUESTION.to_string(),
            k: 4,
            n: 2,
            positives: vec![entries[0].clone(), entries[2].clone()],
            negatives: vec![entries[1].clone(), entries[3].clone()],
            overlap_ids: vec![],
            candidates: vec![],
        }
    }

    fn plan(mode: PromptMode, shots_n: usize) -> PromptPlan {
        PromptPlan { mode, shots_n, ..PromptPlan::default() }
    }

    fn body(prompt: &ComposedPrompt) -> &str {
        &prompt.turns[0].content
    }

    fn count(haystack: &str, needle: &str) -> usize {
        haystack.matches(needle).count()
    }

    #[test]
    fn both_sides_render_one_block_per_shot() {
        let prompt =
            compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegSingle, 2))
                .unwrap();
        let text = body(&prompt);
        assert_eq!(count(text, "<Successful Experience>\n"), 2, "one block header per shot");
        assert_eq!(count(text, "<Failed Experience>\n"), 2);
        assert_eq!(count(text, "<<<<<EXPERIENCE MEMORY>>>>>"), 2, "instruction mention plus header");
        assert_eq!(count(text, "=========="), 1);
        let last_success = text.rfind("<Successful Experience>\n").unwrap();
        let first_failure = text.find("<Failed Experience>\n").unwrap();
        assert!(last_success < first_failure, "successes must precede failures");
        assert!(text.contains("[Database schema]\nCREATE TABLE head"));
        assert!(text.ends_with("[NEW SQL]"));
        assert_eq!(prompt.slots.positives, vec!["a", "c"]);
        assert_eq!(prompt.slots.negatives, vec!["b", "d"]);
    }

    #[test]
    fn single_sided_modes_drop_the_other_side() {
        let pos = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosOnly, 1))
            .unwrap();
        assert_eq!(count(body(&pos), "<Successful Experience>\n"), 1);
        assert_eq!(count(body(&pos), "<Failed Experience>"), 0);
        assert!(body(&pos).contains("Please refer to <Successful Experience>."));

        let neg = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::NegOnly, 1))
            .unwrap();
        assert_eq!(count(body(&neg), "<Successful Experience>"), 0);
        assert_eq!(count(body(&neg), "<Failed Experience>\n"), 1);
        assert!(body(&neg).contains("Please avoid making the same mistakes"));
    }

    #[test]
    fn fixed_mode_uses_plain_example_blocks() {
        let prompt = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::Fixed, 2))
            .unwrap();
        let text = body(&prompt);
        assert_eq!(count(text, "<Example>\n"), 2);
        assert_eq!(count(text, "<Successful Experience>"), 0);
        assert_eq!(count(text, "<Failed Experience>"), 0);
        assert!(text.contains("use the <Example> cases"));
        assert!(prompt.slots.negatives.is_empty());
    }

    #[test]
    fn zero_shots_compose_a_bare_prompt() {
        let prompt =
            compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegSingle, 0))
                .unwrap();
        let text = body(&prompt);
        assert!(!text.contains("EXPERIENCE MEMORY"));
        assert!(!text.contains("=========="));
        assert!(text.contains("<<<<<NEW CASE>>>>>"));
        assert!(text.starts_with("Given a [Database schema] description and the [Question], you need to deal"));
        assert!(prompt.slots.positives.is_empty() && prompt.slots.negatives.is_empty());
    }

    #[test]
    fn constraints_render_only_for_sql_prompts_that_ask() {
        let with = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        assert!(body(&with).contains("[Constraints]"));

        let without = PromptPlan { include_constraints: false, ..PromptPlan::default() };
        let without = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &without).unwrap();
        assert!(!body(&without).contains("[Constraints]"));

        let tableqa = PromptPlan { task_kind: TaskKind::Tableqa, ..PromptPlan::default() };
        let tableqa = compose_prompt(QUESTION, "col: market | stalls", &sample_set(), &tableqa)
            .unwrap();
        assert!(!body(&tableqa).contains("[Constraints]"));
    }

    #[test]
    fn tableqa_prompts_use_table_labels_and_answer_tail() {
        let plan = PromptPlan {
            task_kind: TaskKind::Tableqa,
            mode: PromptMode::PosNegSingle,
            shots_n: 1,
            ..PromptPlan::default()
        };
        let prompt = compose_prompt(QUESTION, "col: market | stalls", &sample_set(), &plan)
            .unwrap();
        let text = body(&prompt);
        assert!(text.contains("[Table digest]"));
        assert!(text.contains("[Successful Answer]"));
        assert!(text.contains("[Failed Answer]"));
        assert!(text.contains("[Table]\ncol: market | stalls"));
        assert!(text.ends_with("[Answer]"));
        assert!(!text.contains("[Database schema]"));
        assert!(!text.contains("[NEW SQL]"));
    }

    #[test]
    fn blank_evidence_is_rejected() {
        for evidence in ["", "  \n\t"] {
            assert!(matches!(
                compose_prompt(QUESTION, evidence, &sample_set(), &PromptPlan::default()),
                Err(ComposeError::MissingEvidence)
            ));
        }
    }

    #[test]
    fn shot_shortfall_names_the_missing_side() {
        let err =
            compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegSingle, 3))
                .unwrap_err();
        match err {
            ComposeError::NotEnoughShots { side, needed, available } => {
                assert_eq!((side, needed, available), ("positive", 3, 2));
            }
            other => panic!("unexpected error {other}"),
        }
        let err = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::NegOnly, 3))
            .unwrap_err();
        assert!(matches!(err, ComposeError::NotEnoughShots { side: "negative", .. }));
    }

    #[test]
    fn two_round_mode_does_not_compose_directly() {
        assert!(matches!(
            compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegTwoRound, 1)),
            Err(ComposeError::InvalidPlan(_))
        ));
    }

    #[test]
    fn rendered_digest_tracks_prompt_content() {
        let first = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        let second = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        assert_eq!(first.rendered_digest, second.rendered_digest);
        assert_eq!(body(&first), body(&second));

        let other = compose_prompt("Different question?", EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        assert_ne!(first.rendered_digest, other.rendered_digest);
    }

    #[test]
    fn prompts_grow_with_shot_count() {
        let one = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosOnly, 1))
            .unwrap();
        let two = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosOnly, 2))
            .unwrap();
        assert!(body(&two).len() > body(&one).len());
    }

    #[test]
    fn render_budget_drops_trailing_exemplars_failures_first() {
        let unbounded =
            compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegSingle, 2))
                .unwrap();
        let full_len = body(&unbounded).len();

        let exact = PromptPlan { max_render_len: Some(full_len), ..plan(PromptMode::PosNegSingle, 2) };
        let exact = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &exact).unwrap();
        assert_eq!(exact.slots.negatives, vec!["b", "d"], "a fitting prompt keeps all shots");

        let squeezed =
            PromptPlan { max_render_len: Some(full_len - 1), ..plan(PromptMode::PosNegSingle, 2) };
        let squeezed = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &squeezed).unwrap();
        assert_eq!(squeezed.slots.positives, vec!["a", "c"]);
        assert_eq!(squeezed.slots.negatives, vec!["b"], "the last failure goes first");
        assert!(body(&squeezed).len() < full_len);

        let starved = PromptPlan { max_render_len: Some(1), ..plan(PromptMode::PosNegSingle, 2) };
        let starved = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &starved).unwrap();
        let zero = compose_prompt(QUESTION, EVIDENCE, &sample_set(), &plan(PromptMode::PosNegSingle, 0))
            .unwrap();
        assert_eq!(body(&starved), body(&zero), "an empty prompt is returned even when over budget");
    }

    #[test]
    fn single_round_solves_both_task_kinds() {
        let gateway = Gateway::new(Box::new(MockBackend::new(7)));
        let sql = solve_single_round(&gateway, QUESTION, EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        assert!(sql.answer.starts_with("SELECT value FROM results WHERE tag ="), "got {}", sql.answer);
        assert_eq!(sql.turns.len(), 2);
        assert_eq!(sql.turns[1].role, Role::Assistant);
        assert!(sql.raw.contains("```sql"));

        let qa_plan = PromptPlan { task_kind: TaskKind::Tableqa, ..PromptPlan::default() };
        let qa = solve_single_round(&gateway, QUESTION, "col: age", &sample_set(), &qa_plan)
            .unwrap();
        assert!(qa.answer.starts_with("value-"), "got {}", qa.answer);

        let again = solve_single_round(&gateway, QUESTION, EVIDENCE, &sample_set(), &PromptPlan::default())
            .unwrap();
        assert_eq!(again.answer, sql.answer);
        assert_eq!(again.rendered_digest, sql.rendered_digest);
    }

    #[test]
    fn single_round_rejects_the_two_round_mode() {
        let gateway = Gateway::new(Box::new(MockBackend::new(7)));
        let result = solve_single_round(
            &gateway,
            QUESTION,
            EVIDENCE,
            &sample_set(),
            &plan(PromptMode::PosNegTwoRound, 1),
        );
        assert!(matches!(result, Err(SolveError::Compose(ComposeError::InvalidPlan(_)))));
    }

    #[test]
    fn two_rounds_show_failures_only_in_the_follow_up() {
        let gateway = Gateway::new(Box::new(MockBackend::new(11)));
        let outcome = solve_two_round(
            &gateway,
            QUESTION,
            EVIDENCE,
            &sample_set(),
            &plan(PromptMode::PosNegTwoRound, 1),
        )
        .unwrap();
        assert_eq!(outcome.turns.len(), 4);
        let roles: Vec<Role> = outcome.turns.iter().map(|t| t.role).collect();
        assert_eq!(roles, vec![Role::User, Role::Assistant, Role::User, Role::Assistant]);

        let opening = &outcome.turns[0].content;
        assert!(opening.contains("<Successful Experience>"));
        assert!(!opening.contains("<Failed Experience>"));
        assert!(opening.contains(EVIDENCE));

        let follow_up = &outcome.turns[2].content;
        assert!(follow_up.starts_with("Your previous SQL may contain mistakes."));
        assert!(follow_up.contains("<Failed Experience>"));
        assert!(!follow_up.contains("<Successful Experience>"));
        assert!(!follow_up.contains(EVIDENCE), "evidence belongs to the opening turn only");
        assert!(follow_up.ends_with("[NEW SQL]"));

        assert!(outcome.corrected);
        assert_eq!(outcome.answer, outcome.second_answer.clone().unwrap());
        assert_ne!(outcome.first_answer, outcome.answer, "rounds see different transcripts");
    }

    /// Succeeds on the first chat call, then fails every later one.
    struct FailAfterFirst {
        inner: MockBackend,
        calls: AtomicUsize,
    }

    impl Backend for FailAfterFirst {
        fn descriptor(&self) -> String {
            "fail-after-first".to_string()
        }

        fn chat(
            &self,
            turns: &[ChatTurn],
            params: &SamplingParams,
        ) -> Result<Vec<String>, GatewayError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) == 0 {
                self.inner.chat(turns, params)
            } else {
                Err(GatewayError::EmptyCompletion)
            }
        }

        fn yes_probability(&self, _turns: &[ChatTurn]) -> Result<Option<f64>, GatewayError> {
            Ok(None)
        }

        fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
            self.inner.embed(text)
        }
    }

    #[test]
    fn failed_second_round_keeps_the_first_answer() {
        let backend = FailAfterFirst { inner: MockBackend::new(3), calls: AtomicUsize::new(0) };
        let gateway = Gateway::with_options(Box::new(backend), &BackendConfig::default());
        let outcome = solve_two_round(
            &gateway,
            QUESTION,
            EVIDENCE,
            &sample_set(),
            &plan(PromptMode::PosNegTwoRound, 1),
        )
        .unwrap();
        assert!(!outcome.corrected);
        assert_eq!(outcome.second_answer, None);
        assert_eq!(outcome.answer, outcome.first_answer);
        assert_eq!(outcome.turns.len(), 3, "the unanswered follow-up stays on record");
        assert_eq!(outcome.turns[2].role, Role::User);
    }

    #[test]
    fn two_round_solver_validates_its_plan() {
        let gateway = Gateway::new(Box::new(MockBackend::new(5)));
        for bad in [plan(PromptMode::PosNegSingle, 1), plan(PromptMode::PosNegTwoRound, 0)] {
            let result = solve_two_round(&gateway, QUESTION, EVIDENCE, &sample_set(), &bad);
            assert!(matches!(result, Err(SolveError::Compose(ComposeError::InvalidPlan(_)))));
        }
    }

    fn indexed_memory(gateway: &Gateway) -> (MemoryDataset, VectorIndex) {
        let dataset = MemoryDataset::from_entries(four_entries());
        let index = build_index(&dataset, |text| {
            gateway.embed_text(text).map(|v| v.values)
        })
        .unwrap();
        (dataset, index)
    }

    #[test]
    fn bootstrap_adds_one_exchange_per_iteration() {
        let gateway = Gateway::new(Box::new(MockBackend::new(13)));
        let (dataset, index) = indexed_memory(&gateway);
        let plan = plan(PromptMode::PosOnly, 1);

        let base = bootstrap(&gateway, &dataset, &index, QUESTION, EVIDENCE, &plan, 0, 4, 2)
            .unwrap();
        assert!(base.completed);
        assert_eq!(base.answers.len(), 1);
        assert_eq!(base.turns.len(), 2);

        let refined = bootstrap(&gateway, &dataset, &index, QUESTION, EVIDENCE, &plan, 2, 4, 2)
            .unwrap();
        assert!(refined.completed);
        assert_eq!(refined.answers.len(), 3);
        assert_eq!(refined.turns.len(), 6);
        assert_eq!(refined.answers[0], base.answers[0], "round one is unaffected by later rounds");
        let user_turns: Vec<usize> = refined
            .turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::User)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(user_turns, vec![0, 2, 4]);
    }

    #[test]
    fn bootstrap_updates_carry_exemplars_but_no_evidence() {
        let gateway = Gateway::new(Box::new(MockBackend::new(13)));
        let (dataset, index) = indexed_memory(&gateway);
        let outcome = bootstrap(
            &gateway,
            &dataset,
            &index,
            QUESTION,
            EVIDENCE,
            &plan(PromptMode::PosOnly, 1),
            2,
            4,
            2,
        )
        .unwrap();
        for update in [&outcome.turns[2], &outcome.turns[4]] {
            assert!(update.content.starts_with("Using the additional experience below"));
            assert!(update.content.contains("<Successful Experience>"));
            assert!(!update.content.contains("<Failed Experience>"));
            assert!(!update.content.contains(EVIDENCE));
            assert!(update.content.ends_with("[NEW SQL]"));
        }
        let with_evidence =
            outcome.turns.iter().filter(|t| t.content.contains(EVIDENCE)).count();
        assert_eq!(with_evidence, 1, "evidence appears once, in the opening prompt");
    }

    #[test]
    fn bootstrap_rejects_the_two_round_mode_and_surfaces_retrieval_errors() {
        let gateway = Gateway::new(Box::new(MockBackend::new(13)));
        let (dataset, index) = indexed_memory(&gateway);
        let result = bootstrap(
            &gateway,
            &dataset,
            &index,
            QUESTION,
            EVIDENCE,
            &plan(PromptMode::PosNegTwoRound, 1),
            1,
            4,
            2,
        );
        assert!(matches!(result, Err(SolveError::Compose(ComposeError::InvalidPlan(_)))));

        let result = bootstrap(
            &gateway,
            &dataset,
            &index,
            QUESTION,
            EVIDENCE,
            &plan(PromptMode::PosOnly, 1),
            1,
            5,
            5,
        );
        assert!(matches!(result, Err(SolveError::Retrieval(_))));
    }
}
