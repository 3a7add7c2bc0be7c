//! Run manifests: enough settings to replay a command and get the same
//! artifacts back (under the mock backend).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use coreason::{PromptPlan, SearchConfig};
use serde::Serialize;

use crate::config::{Resolved, RetrievalConfig};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// Backend identity, e.g. `mock(seed=7)`.
    pub backend: String,
    pub seed: u64,
    pub search: SearchConfig,
    pub retrieval: RetrievalConfig,
    pub plan: PromptPlan,
    /// Input paths and settings that shaped the run.
    pub inputs: BTreeMap<String, String>,
    /// Artifacts the run wrote.
    pub outputs: Vec<PathBuf>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn begin(command: &str, resolved: &Resolved, backend_descriptor: String) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_path: resolved.config_path.clone(),
            backend: backend_descriptor,
            seed: resolved.config.backend.seed,
            search: resolved.config.search.clone(),
            retrieval: resolved.config.retrieval,
            plan: resolved.config.plan.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_at: Utc::now(),
            finished_at: Utc::now(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Stamps the end time and writes `<out>/<command>.manifest.json`.
    pub fn finish(mut self, resolved: &Resolved) -> Result<PathBuf> {
        self.finished_at = Utc::now();
        let path = resolved.out_path(&format!("{}.manifest.json", self.command))?;
        let mut body = serde_json::to_string_pretty(&self)?;
        body.push('\n');
        std::fs::write(&path, body)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
