//! The `index` subcommand: embed every store entry into the vector-index
//! sidecar that retrieval reads.

use anyhow::Context;
use coreason::store::{build_index, load_store, VectorIndex};

use super::store_path;
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::{CliError, IndexArgs};

pub(crate) fn index(resolved: &Resolved, args: &IndexArgs) -> Result<(), CliError> {
    let gateway = resolved.gateway()?;
    let store = store_path(resolved, &args.store)?;
    let (dataset, diagnostics) =
        load_store(&store).with_context(|| format!("loading {}", store.display()))?;
    for diag in &diagnostics {
        log::error!("store line {}: {}", diag.line, diag.message);
    }

    let index = build_index(&dataset, |text| gateway.embed_text(text).map(|v| v.values))
        .context("embedding store entries")?;
    let sidecar = VectorIndex::sidecar_path(&store);
    index
        .write_to(&sidecar)
        .with_context(|| format!("writing index {}", sidecar.display()))?;

    let mut manifest = RunManifest::begin("index", resolved, gateway.descriptor());
    manifest.input("store", store.display());
    manifest.output(&sidecar);
    manifest.finish(resolved)?;

    println!(
        "indexed {} entr(ies) (dimension {}) -> {}",
        dataset.entries.len(),
        index.embedding_dimension,
        sidecar.display()
    );
    if !diagnostics.is_empty() {
        return Err(CliError::Items { failed: diagnostics.len() });
    }
    Ok(())
}
