//! The `evaluate` subcommand: join predictions to gold answers and score
//! them, printing the stratified table and writing the full report.

use std::collections::HashMap;
use std::path::Path;

use anyhow::Context;
use coreason::{answer_accuracy, execution_accuracy, EvalRecord};

use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::records::{read_jsonl, PredictionRecord, QuestionRecord};
use crate::{CliError, EvaluateArgs, TaskChoice};

pub(crate) fn evaluate(resolved: &Resolved, args: &EvaluateArgs) -> Result<(), CliError> {
    let questions: Vec<QuestionRecord> = read_jsonl(&args.questions)?;
    if questions.is_empty() {
        return Err(CliError::Usage("the questions file has no records".into()));
    }
    let base_dir = args.questions.parent().unwrap_or(Path::new(".")).to_path_buf();
    let predictions_path = match &args.predictions {
        Some(path) => path.clone(),
        None => resolved.out_path("predictions.jsonl")?,
    };
    let predictions: Vec<PredictionRecord> = read_jsonl(&predictions_path)?;
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for prediction in &predictions {
        if by_id.insert(prediction.id.as_str(), prediction).is_some() {
            log::warn!("duplicate prediction for {}; keeping the last one", prediction.id);
        }
    }

    let mut records = Vec::new();
    let mut failed = 0usize;
    for question in &questions {
        let Some(gold) = &question.gold else {
            log::error!("question {}: no gold answer; skipping", question.id);
            failed += 1;
            continue;
        };
        let Some(prediction) = by_id.get(question.id.as_str()) else {
            log::error!("question {}: no prediction; skipping", question.id);
            failed += 1;
            continue;
        };
        records.push(EvalRecord {
            id: question.id.clone(),
            question: question.question.clone(),
            gold: gold.clone(),
            predicted: prediction.answer.clone(),
            difficulty: question.difficulty,
            db_path: question.resolved_db_path(&base_dir),
            correct: false,
            failure_kind: None,
        });
    }
    if records.is_empty() {
        return Err(CliError::Fatal(anyhow::anyhow!(
            "nothing to score: no question had both a gold answer and a prediction"
        )));
    }

    let report = match args.task {
        TaskChoice::Text2Sql => execution_accuracy(&records).context("scoring predictions")?,
        TaskChoice::Tableqa => answer_accuracy(&records),
    };
    match report.overall_accuracy {
        Some(accuracy) => println!("overall accuracy: {:.1}%", accuracy * 100.0),
        None => println!("overall accuracy: n/a"),
    }
    print!("{}", report.render_table());

    let out = resolved.out_path("report.json")?;
    let mut body = serde_json::to_string_pretty(&report).context("serializing report")?;
    body.push('\n');
    std::fs::write(&out, body).with_context(|| format!("writing {}", out.display()))?;

    let mut manifest = RunManifest::begin("evaluate", resolved, "local".into());
    manifest.input("questions", args.questions.display());
    manifest.input("predictions", predictions_path.display());
    manifest.output(&out);
    manifest.finish(resolved)?;

    if failed > 0 {
        return Err(CliError::Items { failed });
    }
    Ok(())
}
