//! Layered run settings: built-in defaults, then the TOML config file, then
//! command-line flags, later layers winning.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coreason::{BackendConfig, BackendKind, Gateway, PromptPlan, SearchConfig};
use serde::{Deserialize, Serialize};

/// How many candidates to retrieve and how many exemplars per side to keep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub n: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 8, n: 2 }
    }
}

/// Everything a run needs, as read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub search: SearchConfig,
    pub retrieval: RetrievalConfig,
    pub plan: PromptPlan,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<AppConfig> {
        let Some(path) = path else { return Ok(AppConfig::default()) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// The fully resolved settings for one invocation.
pub struct Resolved {
    pub config: AppConfig,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Resolved {
    pub fn from_flags(
        config_path: Option<PathBuf>,
        seed: Option<u64>,
        backend: Option<BackendKind>,
        out: Option<PathBuf>,
        jobs: Option<usize>,
    ) -> Result<Resolved> {
        let mut config = AppConfig::load(config_path.as_deref())?;
        if let Some(seed) = seed {
            config.backend.seed = seed;
        }
        if let Some(kind) = backend {
            config.backend.kind = kind;
        }
        let jobs = jobs.unwrap_or(config.backend.parallelism).max(1);
        Ok(Resolved {
            config,
            config_path,
            out_dir: out.unwrap_or_else(|| PathBuf::from("out")),
            jobs,
        })
    }

    pub fn gateway(&self) -> Result<Gateway> {
        Gateway::from_config(&self.config.backend).context("constructing backend")
    }

    /// Output path under the run's `--out` directory, creating parents.
    pub fn out_path(&self, name: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_without_a_config_file() {
        let resolved = Resolved::from_flags(None, Some(7), None, None, None).unwrap();
        assert_eq!(resolved.config.backend.seed, 7);
        assert_eq!(resolved.config.retrieval.k, 8);
        assert_eq!(resolved.out_dir, PathBuf::from("out"));
        assert_eq!(resolved.jobs, resolved.config.backend.parallelism);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "[backend]\nseed = 3\nparallelism = 2\n\n[retrieval]\nk = 4\nn = 2\n\n[search]\nn_rollouts = 6\n",
        )
        .unwrap();
        let resolved =
            Resolved::from_flags(Some(path), Some(9), Some(BackendKind::Mock), None, Some(5))
                .unwrap();
        assert_eq!(resolved.config.backend.seed, 9, "flag beats file");
        assert_eq!(resolved.config.retrieval.k, 4);
        assert_eq!(resolved.config.search.n_rollouts, 6);
        assert_eq!(resolved.jobs, 5);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[backend]\nsped = 3\n").unwrap();
        assert!(Resolved::from_flags(Some(path), None, None, None, None).is_err());
    }
}
