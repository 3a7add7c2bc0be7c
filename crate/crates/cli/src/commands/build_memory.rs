//! The `build-memory` subcommand: tree search per question, harvested
//! entries appended to the store, one tree file per question.

use std::path::Path;

use anyhow::Context;
use coreason::mcts::{harvest_experience, TreeSearch};
use coreason::store::append_entries;
use coreason::ExperienceEntry;
use rayon::prelude::*;

use super::{apply_limit, sanitize_id, store_path};
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::records::{read_jsonl, QuestionRecord};
use crate::{BuildMemoryArgs, CliError};

pub(crate) fn build_memory(resolved: &Resolved, args: &BuildMemoryArgs) -> Result<(), CliError> {
    let gateway = resolved.gateway()?;
    let questions: Vec<QuestionRecord> = read_jsonl(&args.questions)?;
    let questions = apply_limit(questions, args.limit);
    if questions.is_empty() {
        return Err(CliError::Usage("the questions file has no records".into()));
    }
    let base_dir = args.questions.parent().unwrap_or(Path::new(".")).to_path_buf();
    let store = store_path(resolved, &args.store)?;
    let search = TreeSearch::new(&gateway, resolved.config.search.clone())
        .context("search configuration")?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs)
        .build()
        .context("building worker pool")?;
    type ItemResult = Result<(coreason::SearchTree, Vec<ExperienceEntry>), String>;
    let results: Vec<ItemResult> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| {
                let evidence = q.read_evidence(&base_dir).map_err(|e| format!("{e:#}"))?;
                let tree = search
                    .run_search(&q.question, &evidence, q.gold.as_deref())
                    .map_err(|e| e.to_string())?;
                let mut entries = harvest_experience(&tree, search.config(), q.gold.as_deref());
                if let Some(dataset) = &args.dataset {
                    for entry in &mut entries {
                        entry.dataset = dataset.clone();
                    }
                }
                Ok((tree, entries))
            })
            .collect()
    });

    let mut manifest = RunManifest::begin("build-memory", resolved, gateway.descriptor());
    manifest.input("questions", args.questions.display());
    manifest.input("store", store.display());
    if let Some(limit) = args.limit {
        manifest.input("limit", limit);
    }
    if let Some(dataset) = &args.dataset {
        manifest.input("dataset", dataset);
    }

    let mut harvested: Vec<ExperienceEntry> = Vec::new();
    let mut trees_written = 0usize;
    let mut failed = 0usize;
    for (question, result) in questions.iter().zip(results) {
        match result {
            Ok((tree, entries)) => {
                let tree_file =
                    resolved.out_path(&format!("trees/{}.tree.json", sanitize_id(&question.id)))?;
                tree.write_to(&tree_file)
                    .with_context(|| format!("writing tree {}", tree_file.display()))?;
                manifest.output(&tree_file);
                trees_written += 1;
                harvested.extend(entries);
            }
            Err(message) => {
                log::error!("question {}: {message}", question.id);
                failed += 1;
            }
        }
    }

    let appended = append_entries(&store, &harvested).context("appending to the store")?;
    manifest.output(&store);
    manifest.finish(resolved)?;
    println!(
        "built {trees_written} tree(s); appended {appended} new of {} harvested entr(ies) to {}",
        harvested.len(),
        store.display()
    );
    if failed > 0 {
        return Err(CliError::Items { failed });
    }
    Ok(())
}
