//! Pins rendered prompts to golden files so template drift is caught byte
//! for byte. Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden_prompts`
//! after an intentional template change, then review the diff.

use std::fs;
use std::path::PathBuf;

use coreason::gateway::render_transcript;
use coreason::retrieve::ContrastiveSet;
use coreason::{
    compose_prompt, solve_two_round, ExperienceEntry, Gateway, MockBackend, PromptMode,
    PromptPlan, TaskKind,
};

const QUESTION: &str = "How many heads of the departments are older than 56?";
const EVIDENCE: &str = "CREATE TABLE head (head_id int, name text, age int)";
const TABLE_EVIDENCE: &str = "col : market | stalls row 1 : north | 12 row 2 : south | 7";

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

fn sample_set() -> ContrastiveSet {
    let a = entry(
        "a",
        "How many heads are older than 60?",
        "SELECT count(*) FROM head WHERE age > 60",
        1.0,
    );
    let b = entry(
        "b",
        "List singer names by age.",
        "SELECT name FROM singer ORDER BY age",
        0.0,
    );
    let c = entry(
        "c",
        "Average horsepower before 1980?",
        "SELECT avg(horsepower) FROM cars WHERE year < 1980",
        0.8,
    );
    let d = entry(
        "d",
        "Which market has the most stalls?",
        "SELECT market FROM stalls LIMIT 1",
        0.2,
    );
    ContrastiveSet {
        query: QUESTION.to_string(),
        k: 4,
        n: 2,
        positives: vec![a, c],
        negatives: vec![b, d],
        overlap_ids: vec![],
        candidates: vec![],
    }
}

fn plan(mode: PromptMode, shots_n: usize) -> PromptPlan {
    PromptPlan { mode, shots_n, ..PromptPlan::default() }
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"))
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(
        actual,
        expected,
        "rendered output diverged from {}; rerun with UPDATE_GOLDEN=1 if intentional",
        path.display()
    );
}

fn composed_body(question: &str, evidence: &str, plan: &PromptPlan) -> String {
    let prompt = compose_prompt(question, evidence, &sample_set(), plan).unwrap();
    assert_eq!(prompt.turns.len(), 1);
    prompt.turns[0].content.clone()
}

#[test]
fn pos_neg_single_one_shot_matches_golden() {
    check_golden(
        "pos_neg_single_n1_sql",
        &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::PosNegSingle, 1)),
    );
}

#[test]
fn pos_neg_single_two_shot_matches_golden() {
    check_golden(
        "pos_neg_single_n2_sql",
        &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::PosNegSingle, 2)),
    );
}

#[test]
fn pos_only_matches_golden() {
    check_golden("pos_only_sql", &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::PosOnly, 1)));
}

#[test]
fn neg_only_matches_golden() {
    check_golden("neg_only_sql", &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::NegOnly, 1)));
}

#[test]
fn fixed_matches_golden() {
    check_golden("fixed_sql", &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::Fixed, 2)));
}

#[test]
fn zero_shot_matches_golden() {
    check_golden(
        "zero_shot_sql",
        &composed_body(QUESTION, EVIDENCE, &plan(PromptMode::PosNegSingle, 0)),
    );
}

#[test]
fn tableqa_pos_neg_matches_golden() {
    let plan = PromptPlan {
        mode: PromptMode::PosNegSingle,
        shots_n: 1,
        task_kind: TaskKind::Tableqa,
        ..PromptPlan::default()
    };
    check_golden("pos_neg_single_n1_tableqa", &composed_body(QUESTION, TABLE_EVIDENCE, &plan));
}

#[test]
fn two_round_transcript_matches_golden() {
    let gateway = Gateway::new(Box::new(MockBackend::new(11)));
    let outcome = solve_two_round(
        &gateway,
        QUESTION,
        EVIDENCE,
        &sample_set(),
        &plan(PromptMode::PosNegTwoRound, 1),
    )
    .unwrap();
    assert!(outcome.corrected);

    let failure_turns: Vec<usize> = outcome
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.content.contains("<Failed Experience>\n"))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(failure_turns, vec![2], "failure exemplars appear only in the second round");

    check_golden("two_round_sql_transcript", &render_transcript(&outcome.turns));
}
