//! The `stats` subcommand: reward distribution and expansion factor for an
//! experience store.

use anyhow::Context;
use coreason::reward_histogram;
use coreason::store::load_store;

use super::store_path;
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::{CliError, StatsArgs};

pub(crate) fn stats(resolved: &Resolved, args: &StatsArgs) -> Result<(), CliError> {
    let store = store_path(resolved, &args.store)?;
    let (dataset, diagnostics) =
        load_store(&store).with_context(|| format!("loading {}", store.display()))?;
    for diag in &diagnostics {
        log::error!("store line {}: {}", diag.line, diag.message);
    }
    let histogram = reward_histogram(&dataset);

    println!("entries: {}", histogram.total);
    println!("distinct sources: {}", histogram.distinct_sources);
    println!("expansion factor: {:.2}", histogram.expansion_factor);
    for (i, count) in histogram.counts.iter().enumerate() {
        let low = histogram.bin_edges[i];
        let high = histogram.bin_edges[i + 1];
        let closing = if i + 1 == histogram.counts.len() { ']' } else { ')' };
        println!(
            "[{low:.1}, {high:.1}{closing} {count:>6} {}",
            "#".repeat((*count).min(50) as usize)
        );
    }

    let mut manifest = RunManifest::begin("stats", resolved, "local".into());
    manifest.input("store", store.display());
    if let Some(csv) = &args.csv {
        if let Some(parent) = csv.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(csv, histogram.to_csv())
            .with_context(|| format!("writing {}", csv.display()))?;
        manifest.output(csv);
    }
    manifest.finish(resolved)?;

    if !diagnostics.is_empty() {
        return Err(CliError::Items { failed: diagnostics.len() });
    }
    Ok(())
}
