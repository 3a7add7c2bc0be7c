//! The `describe` subcommand: annotate stored answers with deterministic
//! natural-language descriptions so retrieval can embed them.

use anyhow::Context;
use coreason::store::annotate_descriptions;
use coreason::AnswerKind;

use super::store_path;
use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::{CliError, DescribeArgs, TaskChoice};

pub(crate) fn describe(resolved: &Resolved, args: &DescribeArgs) -> Result<(), CliError> {
    let store = store_path(resolved, &args.store)?;
    let kind = match args.task {
        TaskChoice::Text2Sql => AnswerKind::Sql,
        TaskChoice::Tableqa => AnswerKind::Freeform,
    };
    let annotated = annotate_descriptions(&store, kind)
        .with_context(|| format!("annotating {}", store.display()))?;

    let mut manifest = RunManifest::begin("describe", resolved, "local".into());
    manifest.input("store", store.display());
    manifest.output(&store);
    manifest.finish(resolved)?;

    println!("annotated {annotated} entr(ies) in {}", store.display());
    Ok(())
}
