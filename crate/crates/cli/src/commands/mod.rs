//! One submodule per subcommand, plus shared plumbing.

mod build_memory;
mod describe;
mod evaluate;
mod index;
mod retrieve;
mod solve;
mod stats;

pub(crate) use build_memory::build_memory;
pub(crate) use describe::describe;
pub(crate) use evaluate::evaluate;
pub(crate) use index::index;
pub(crate) use retrieve::retrieve;
pub(crate) use solve::solve;
pub(crate) use stats::stats;

use std::path::PathBuf;

use anyhow::{Context, Result};
use coreason::store::VectorIndex;
use coreason::MemoryDataset;

use crate::config::Resolved;

/// The store a command works on: the `--store` flag, else `<out>/memory.jsonl`.
fn store_path(resolved: &Resolved, flag: &Option<PathBuf>) -> Result<PathBuf> {
    match flag {
        Some(path) => Ok(path.clone()),
        None => resolved.out_path("memory.jsonl"),
    }
}

/// Loads the store's index sidecar and insists it matches the store contents.
fn fresh_index(store: &std::path::Path, dataset: &MemoryDataset) -> Result<VectorIndex> {
    let sidecar = VectorIndex::sidecar_path(store);
    if !sidecar.exists() {
        anyhow::bail!("no index at {}; run `coreason index` first", sidecar.display());
    }
    let index = VectorIndex::read_from(&sidecar)
        .with_context(|| format!("reading index {}", sidecar.display()))?;
    if !index.is_fresh(dataset) {
        anyhow::bail!("index {} is stale; rerun `coreason index`", sidecar.display());
    }
    Ok(index)
}

/// Something safe to use as a file name.
fn sanitize_id(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "item".to_string()
    } else {
        cleaned
    }
}

fn apply_limit<T>(items: Vec<T>, limit: Option<usize>) -> Vec<T> {
    match limit {
        Some(n) => items.into_iter().take(n).collect(),
        None => items,
    }
}

fn truncate_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let kept: String = text.chars().take(max_chars.saturating_sub(3)).collect();
    format!("{kept}...")
}
