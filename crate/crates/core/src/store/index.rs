//! Exact-search vector index kept beside the store.
//!
//! The index is always regenerable and never the source of truth: it records
//! the store's content digest at build time, and any mismatch marks it stale.
//! Vectors are expected unit-normalized so retrieval can treat dot products
//! as cosine similarities.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperienceEntry, MemoryDataset, StoreError};
use crate::gateway::GatewayError;

pub const INDEX_SCHEMA: &str = "experience-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexedVector {
    pub entry_id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    pub schema: String,
    pub version: u32,
    pub store_digest: String,
    pub embedding_dimension: usize,
    pub vectors: Vec<IndexedVector>,
}

impl VectorIndex {
    /// Sidecar file for a given store path: `<store>.index.json`.
    pub fn sidecar_path(store_path: &Path) -> PathBuf {
        let mut os = store_path.as_os_str().to_os_string();
        os.push(".index.json");
        PathBuf::from(os)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), StoreError> {
        let body = serde_json::to_string_pretty(self).expect("index serializes");
        fs::write(path, body).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_from(path: &Path) -> Result<VectorIndex, StoreError> {
        let text = fs::read_to_string(path)
            .map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        let index: VectorIndex = serde_json::from_str(&text)
            .map_err(|e| StoreError::IndexFormat(e.to_string()))?;
        if index.schema != INDEX_SCHEMA {
            return Err(StoreError::IndexFormat(format!(
                "expected schema {INDEX_SCHEMA:?}, found {:?}",
                index.schema
            )));
        }
        if index.version != INDEX_VERSION {
            return Err(StoreError::Version { found: index.version, supported: INDEX_VERSION });
        }
        for v in &index.vectors {
            if v.values.len() != index.embedding_dimension {
                return Err(StoreError::IndexFormat(format!(
                    "entry {} has dimension {}, index declares {}",
                    v.entry_id,
                    v.values.len(),
                    index.embedding_dimension
                )));
            }
        }
        Ok(index)
    }

    /// An index is fresh iff it was built from exactly this entry set.
    pub fn is_fresh(&self, dataset: &MemoryDataset) -> bool {
        self.store_digest == dataset.content_digest()
            && self.vectors.len() == dataset.entries.len()
    }
}

/// The text a retrieval vector stands for: the question, sharpened by the
/// answer description when one is present.
pub fn embedded_text(entry: &ExperienceEntry) -> String {
    match &entry.nl_description {
        Some(desc) if !desc.is_empty() => format!("{}\n{}", entry.question, desc),
        _ => entry.question.clone(),
    }
}

/// Embeds one vector per entry, in entry order, and stamps the result with
/// the dataset's content digest.
pub fn build_index<F>(dataset: &MemoryDataset, mut embed: F) -> Result<VectorIndex, StoreError>
where
    F: FnMut(&str) -> Result<Vec<f32>, GatewayError>,
{
    let mut vectors = Vec::with_capacity(dataset.entries.len());
    let mut dimension = 0usize;
    for entry in &dataset.entries {
        let values = embed(&embedded_text(entry)).map_err(|e| StoreError::Embedding {
            entry_id: entry.id.clone(),
            detail: e.to_string(),
        })?;
        if dimension == 0 {
            dimension = values.len();
        } else if values.len() != dimension {
            return Err(StoreError::DimensionDrift {
                entry_id: entry.id.clone(),
                expected: dimension,
                found: values.len(),
            });
        }
        vectors.push(IndexedVector { entry_id: entry.id.clone(), values });
    }
    Ok(VectorIndex {
        schema: INDEX_SCHEMA.to_string(),
        version: INDEX_VERSION,
        store_digest: dataset.content_digest(),
        embedding_dimension: dimension,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, MockBackend};
    use tempfile::TempDir;

    fn entry(q: &str) -> ExperienceEntry {
        ExperienceEntry {
            id: crate::digest::short_id(&["idx", q]),
            dataset: "custom".into(),
            question: q.into(),
            answer: format!("answer to {q}"),
            reward: 0.5,
            depth: 1,
            parent_trace_id: None,
            nl_description: None,
            evidence_digest: "ev".into(),
        }
    }

    fn mock_embed(text: &str) -> Result<Vec<f32>, GatewayError> {
        MockBackend::new(7).embed(text)
    }

    #[test]
    fn one_vector_per_entry_with_digest() {
        let dataset = MemoryDataset::from_entries(vec![entry("a"), entry("b"), entry("c")]);
        let index = build_index(&dataset, mock_embed).unwrap();
        assert_eq!(index.vectors.len(), 3);
        assert_eq!(index.store_digest, dataset.content_digest());
        assert!(index.is_fresh(&dataset));
    }

    #[test]
    fn rebuild_on_unchanged_store_is_identical() {
        let dataset = MemoryDataset::from_entries(vec![entry("a"), entry("b")]);
        let first = build_index(&dataset, mock_embed).unwrap();
        let second = build_index(&dataset, mock_embed).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
    }

    #[test]
    fn changed_entries_make_the_index_stale() {
        let dataset = MemoryDataset::from_entries(vec![entry("a")]);
        let index = build_index(&dataset, mock_embed).unwrap();
        let changed = MemoryDataset::from_entries(vec![entry("a"), entry("b")]);
        assert!(!index.is_fresh(&changed));
    }

    #[test]
    fn description_participates_in_the_embedded_text() {
        let mut with_desc = entry("a");
        with_desc.nl_description = Some("This query counts rows.".into());
        assert_eq!(embedded_text(&with_desc), "a\nThis query counts rows.");
        assert_eq!(embedded_text(&entry("a")), "a");
    }

    #[test]
    fn dimension_drift_is_rejected() {
        let dataset = MemoryDataset::from_entries(vec![entry("a"), entry("b")]);
        let mut flip = false;
        let result = build_index(&dataset, |text| {
            let dim = if flip { 8 } else { 16 };
            flip = true;
            Ok(MockBackend::new(7).with_dimension(dim).embed(text).unwrap())
        });
        assert!(matches!(result, Err(StoreError::DimensionDrift { .. })));
    }

    #[test]
    fn sidecar_round_trip_and_schema_check() {
        let dir = TempDir::new().unwrap();
        let store_path = dir.path().join("store.jsonl");
        let sidecar = VectorIndex::sidecar_path(&store_path);
        assert!(sidecar.to_string_lossy().ends_with("store.jsonl.index.json"));

        let dataset = MemoryDataset::from_entries(vec![entry("a")]);
        let index = build_index(&dataset, mock_embed).unwrap();
        index.write_to(&sidecar).unwrap();
        let loaded = VectorIndex::read_from(&sidecar).unwrap();
        assert_eq!(loaded.store_digest, index.store_digest);
        assert_eq!(loaded.vectors.len(), 1);

        fs::write(&sidecar, "{\"schema\":\"other\",\"version\":1,\"store_digest\":\"\",\"embedding_dimension\":0,\"vectors\":[]}").unwrap();
        assert!(matches!(VectorIndex::read_from(&sidecar), Err(StoreError::IndexFormat(_))));
    }
}
