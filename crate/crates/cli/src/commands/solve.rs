//! The `solve` subcommand: answer each question with a contrastive prompt
//! composed from the store, writing predictions and full transcripts.

use std::path::Path;

use anyhow::Context;
use coreason::gateway::render_transcript;
use coreason::store::load_store;
use coreason::thinker::{bootstrap, solve_single_round, solve_two_round, PromptMode};
use coreason::retrieve_contrastive;
use rayon::prelude::*;

use super::{apply_limit, fresh_index, sanitize_id, store_path};
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::records::{read_jsonl, write_jsonl, PredictionRecord, QuestionRecord};
use crate::{CliError, SolveArgs};

pub(crate) fn solve(resolved: &Resolved, args: &SolveArgs) -> Result<(), CliError> {
    let mut plan = resolved.config.plan.clone();
    if let Some(mode) = args.mode {
        plan.mode = mode.into();
    }
    if let Some(shots) = args.shots {
        plan.shots_n = shots;
    }
    if let Some(task) = args.task {
        plan.task_kind = task.into();
    }
    if args.bootstrap.is_some() && plan.mode == PromptMode::PosNegTwoRound {
        return Err(CliError::Usage(
            "--bootstrap cannot be combined with mode pos_neg_two_round".into(),
        ));
    }
    let k = args.k.unwrap_or(resolved.config.retrieval.k);
    let n = args.n.unwrap_or(resolved.config.retrieval.n);

    let gateway = resolved.gateway()?;
    let store = store_path(resolved, &args.store)?;
    let (dataset, diagnostics) =
        load_store(&store).with_context(|| format!("loading {}", store.display()))?;
    for diag in &diagnostics {
        log::error!("store line {}: {}", diag.line, diag.message);
    }
    let index = fresh_index(&store, &dataset)?;

    let questions: Vec<QuestionRecord> = read_jsonl(&args.questions)?;
    let questions = apply_limit(questions, args.limit);
    if questions.is_empty() {
        return Err(CliError::Usage("the questions file has no records".into()));
    }
    let base_dir = args.questions.parent().unwrap_or(Path::new(".")).to_path_buf();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs)
        .build()
        .context("building worker pool")?;
    type ItemResult = Result<(PredictionRecord, String), String>;
    let results: Vec<ItemResult> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| solve_one(&gateway, &dataset, &index, q, &base_dir, &plan, args, k, n))
            .collect()
    });

    let mut manifest = RunManifest::begin("solve", resolved, gateway.descriptor());
    manifest.input("questions", args.questions.display());
    manifest.input("store", store.display());
    manifest.input("mode", serde_json::to_string(&plan.mode).unwrap_or_default());
    manifest.input("shots", plan.shots_n);
    manifest.input("k", k);
    manifest.input("n", n);
    if let Some(iterations) = args.bootstrap {
        manifest.input("bootstrap", iterations);
    }
    if let Some(limit) = args.limit {
        manifest.input("limit", limit);
    }

    let mut predictions = Vec::new();
    let mut failed = 0usize;
    for (question, result) in questions.iter().zip(results) {
        match result {
            Ok((prediction, transcript)) => {
                let file = resolved
                    .out_path(&format!("transcripts/{}.txt", sanitize_id(&question.id)))?;
                std::fs::write(&file, transcript)
                    .with_context(|| format!("writing transcript {}", file.display()))?;
                manifest.output(&file);
                predictions.push(prediction);
            }
            Err(message) => {
                log::error!("question {}: {message}", question.id);
                failed += 1;
            }
        }
    }

    let out = match &args.predictions {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            path.clone()
        }
        None => resolved.out_path("predictions.jsonl")?,
    };
    write_jsonl(&out, &predictions)?;
    manifest.output(&out);
    manifest.finish(resolved)?;

    println!("solved {}/{} question(s) -> {}", predictions.len(), questions.len(), out.display());
    if failed > 0 {
        return Err(CliError::Items { failed });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve_one(
    gateway: &coreason::Gateway,
    dataset: &coreason::MemoryDataset,
    index: &coreason::store::VectorIndex,
    question: &QuestionRecord,
    base_dir: &Path,
    plan: &coreason::PromptPlan,
    args: &SolveArgs,
    k: usize,
    n: usize,
) -> Result<(PredictionRecord, String), String> {
    let evidence = question.read_evidence(base_dir).map_err(|e| format!("{e:#}"))?;
    let mut record = PredictionRecord {
        id: question.id.clone(),
        question: question.question.clone(),
        answer: String::new(),
        mode: plan.mode,
        rounds: 0,
        corrected: None,
        rendered_digest: None,
    };
    let turns = match (args.bootstrap, plan.mode) {
        (Some(iterations), _) => {
            let outcome = bootstrap(
                gateway,
                dataset,
                index,
                &question.question,
                &evidence,
                plan,
                iterations,
                k,
                n,
            )
            .map_err(|e| e.to_string())?;
            if !outcome.completed {
                log::warn!(
                    "question {}: a refinement round failed; keeping the last good answer",
                    question.id
                );
            }
            record.answer = outcome.answers.last().cloned().unwrap_or_default();
            record.rounds = outcome.answers.len();
            outcome.turns
        }
        (None, PromptMode::PosNegTwoRound) => {
            let set = retrieve_contrastive(&question.question, gateway, dataset, index, k, n)
                .map_err(|e| e.to_string())?;
            let outcome = solve_two_round(gateway, &question.question, &evidence, &set, plan)
                .map_err(|e| e.to_string())?;
            record.answer = outcome.answer.clone();
            record.rounds = if outcome.corrected { 2 } else { 1 };
            record.corrected = Some(outcome.corrected);
            outcome.turns
        }
        (None, _) => {
            let set = retrieve_contrastive(&question.question, gateway, dataset, index, k, n)
                .map_err(|e| e.to_string())?;
            let outcome = solve_single_round(gateway, &question.question, &evidence, &set, plan)
                .map_err(|e| e.to_string())?;
            record.answer = outcome.answer.clone();
            record.rounds = 1;
            record.rendered_digest = Some(outcome.rendered_digest.clone());
            outcome.turns
        }
    };
    Ok((record, render_transcript(&turns)))
}
