//! The `retrieve` subcommand: rank the store against one query and print the
//! full candidate table, with the chosen exemplar sets underneath.

use anyhow::Context;
use coreason::retrieve_contrastive;
use coreason::store::load_store;
use coreason::ExperienceEntry;

use super::{fresh_index, store_path, truncate_chars};
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::{CliError, RetrieveArgs};

pub(crate) fn retrieve(resolved: &Resolved, args: &RetrieveArgs) -> Result<(), CliError> {
    let gateway = resolved.gateway()?;
    let store = store_path(resolved, &args.store)?;
    let (dataset, diagnostics) =
        load_store(&store).with_context(|| format!("loading {}", store.display()))?;
    for diag in &diagnostics {
        log::error!("store line {}: {}", diag.line, diag.message);
    }
    let index = fresh_index(&store, &dataset)?;
    let k = args.k.unwrap_or(resolved.config.retrieval.k);
    let n = args.n.unwrap_or(resolved.config.retrieval.n);

    let set = retrieve_contrastive(&args.query, &gateway, &dataset, &index, k, n)
        .context("retrieving exemplars")?;

    println!(
        "{:<18} {:>10} {:>5} {:>5} {:>7} {:>7} {:>7}  question",
        "id", "similarity", "r_sim", "r_rwd", "f_pos", "f_neg", "reward"
    );
    for candidate in &set.candidates {
        println!(
            "{:<18} {:>10.6} {:>5} {:>5} {:>7.1} {:>7.1} {:>7.2}  {}",
            candidate.entry.id,
            candidate.similarity,
            candidate.rank_sim,
            candidate.rank_reward,
            candidate.final_pos,
            candidate.final_neg,
            candidate.entry.reward,
            truncate_chars(&candidate.entry.question, 60)
        );
    }
    println!("positives: {}", id_list(&set.positives));
    println!("negatives: {}", id_list(&set.negatives));
    if !set.overlap_ids.is_empty() {
        println!("overlap: {}", set.overlap_ids.join(", "));
    }

    let table = resolved.out_path("candidates.json")?;
    let mut body = serde_json::to_string_pretty(&set).context("serializing candidates")?;
    body.push('\n');
    std::fs::write(&table, body)
        .with_context(|| format!("writing {}", table.display()))?;

    let mut manifest = RunManifest::begin("retrieve", resolved, gateway.descriptor());
    manifest.input("query", &args.query);
    manifest.input("store", store.display());
    manifest.input("k", k);
    manifest.input("n", n);
    manifest.output(&table);
    manifest.finish(resolved)?;

    if !diagnostics.is_empty() {
        return Err(CliError::Items { failed: diagnostics.len() });
    }
    Ok(())
}

fn id_list(entries: &[ExperienceEntry]) -> String {
    if entries.is_empty() {
        return "(none)".to_string();
    }
    entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join(", ")
}
