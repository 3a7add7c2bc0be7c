//! Contrastive retrieval over an experience store.
//!
//! A query is ranked against every stored entry by cosine similarity, the
//! retrieved top k are re-ranked by reward, and the two rankings are fused by
//! averaging. The best fused positions under the reward ordering become the
//! positive exemplars; the best under the reversed reward ordering become the
//! negative exemplars.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::store::{ExperienceEntry, MemoryDataset, VectorIndex};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("the experience store is empty")]
    EmptyStore,
    #[error("retrieval needs {needed} entries but the store holds {found}")]
    ShortSet { needed: usize, found: usize },
    #[error("the vector index does not match the store; rebuild it")]
    StaleIndex,
    #[error("query embedding has dimension {query} but the index holds {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("invalid retrieval arguments: {0}")]
    InvalidArguments(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One retrieved entry with its similarity rank, reward rank, and the fused
/// positions used for contrastive selection (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub entry: ExperienceEntry,
    pub similarity: f64,
    pub rank_sim: usize,
    pub rank_reward: usize,
    pub final_pos: f64,
    pub final_neg: f64,
}

/// The n positive and n negative exemplars chosen for a query, together with
/// the full candidate table for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveSet {
    pub query: String,
    pub k: usize,
    pub n: usize,
    pub positives: Vec<ExperienceEntry>,
    pub negatives: Vec<ExperienceEntry>,
    /// Ids selected as both positive and negative, possible when k < 2n.
    pub overlap_ids: Vec<String>,
    pub candidates: Vec<RetrievalCandidate>,
}

/// Ranks the store against a query embedding and returns the top `k` by
/// cosine similarity (ties broken by entry id), with `rank_sim` assigned
/// 1-based and the fusion fields zeroed. `k` is clamped to the store size.
pub fn similarity_topk(
    query: &EmbeddingVector,
    dataset: &MemoryDataset,
    index: &VectorIndex,
    k: usize,
) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidArguments("k must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    if !index.is_fresh(dataset) {
        return Err(RetrievalError::StaleIndex);
    }
    if query.dimension() != index.embedding_dimension {
        return Err(RetrievalError::DimensionMismatch {
            query: query.dimension(),
            index: index.embedding_dimension,
        });
    }

    let mut scored = Vec::with_capacity(dataset.entries.len());
    for (entry, vector) in dataset.entries.iter().zip(&index.vectors) {
        if entry.id != vector.entry_id {
            return Err(RetrievalError::StaleIndex);
        }
        scored.push((entry, cosine(&query.values, &vector.values)));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    scored.truncate(k.min(dataset.entries.len()));

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (entry, similarity))| RetrievalCandidate {
            entry: entry.clone(),
            similarity,
            rank_sim: i + 1,
            rank_reward: 0,
            final_pos: 0.0,
            final_neg: 0.0,
        })
        .collect())
}

/// Cosine similarity with f64 accumulation; zero vectors score 0.
fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}

/// Assigns reward ranks (descending reward, ties by similarity rank) and the
/// fused positions: `final_pos` averages the similarity and reward ranks,
/// `final_neg` averages the similarity rank with the reversed reward rank.
/// Candidates come back in similarity-rank order.
pub fn rank_fuse(mut candidates: Vec<RetrievalCandidate>) -> Vec<RetrievalCandidate> {
    let k = candidates.len();
    if k == 0 {
        return candidates;
    }
    let mut by_reward: Vec<usize> = (0..k).collect();
    by_reward.sort_by(|&a, &b| {
        candidates[b]
            .entry
            .reward
            .partial_cmp(&candidates[a].entry.reward)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| candidates[a].rank_sim.cmp(&candidates[b].rank_sim))
    });
    for (rank0, &i) in by_reward.iter().enumerate() {
        candidates[i].rank_reward = rank0 + 1;
    }
    for candidate in &mut candidates {
        let reversed = k + 1 - candidate.rank_reward;
        candidate.final_pos = (candidate.rank_sim + candidate.rank_reward) as f64 / 2.0;
        candidate.final_neg = (candidate.rank_sim + reversed) as f64 / 2.0;
    }
    candidates.sort_by_key(|c| c.rank_sim);
    candidates
}

/// Selects the contrastive set from fused candidates: the best `n` by
/// `final_pos` as positives and the best `n` by `final_neg` as negatives,
/// with fused-score ties broken by similarity rank.
pub fn contrastive_from_candidates(
    query: &str,
    k: usize,
    n: usize,
    candidates: Vec<RetrievalCandidate>,
) -> Result<ContrastiveSet, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::InvalidArguments("n must be >= 1".into()));
    }
    if n > k {
        return Err(RetrievalError::InvalidArguments(format!("n ({n}) must not exceed k ({k})")));
    }
    if candidates.len() < n {
        return Err(RetrievalError::ShortSet { needed: n, found: candidates.len() });
    }

    let select = |key: fn(&RetrievalCandidate) -> f64| -> Vec<ExperienceEntry> {
        let mut order: Vec<&RetrievalCandidate> = candidates.iter().collect();
        order.sort_by(|a, b| {
            key(a)
                .partial_cmp(&key(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.rank_sim.cmp(&b.rank_sim))
        });
        order.into_iter().take(n).map(|c| c.entry.clone()).collect()
    };
    let positives = select(|c| c.final_pos);
    let negatives = select(|c| c.final_neg);
    let overlap_ids = positives
        .iter()
        .filter(|p| negatives.iter().any(|n| n.id == p.id))
        .map(|p| p.id.clone())
        .collect();

    Ok(ContrastiveSet { query: query.to_string(), k, n, positives, negatives, overlap_ids, candidates })
}

/// Full contrastive retrieval for a query: embed, rank by similarity, fuse
/// with reward ranks, and select `n` positives and `n` negatives out of the
/// top `k`.
pub fn retrieve_contrastive(
    query: &str,
    gateway: &Gateway,
    dataset: &MemoryDataset,
    index: &VectorIndex,
    k: usize,
    n: usize,
) -> Result<ContrastiveSet, RetrievalError> {
    if query.trim().is_empty() {
        return Err(RetrievalError::InvalidArguments("query must be non-empty".into()));
    }
    if n == 0 || k == 0 {
        return Err(RetrievalError::InvalidArguments("k and n must be >= 1".into()));
    }
    if n > k {
        return Err(RetrievalError::InvalidArguments(format!("n ({n}) must not exceed k ({k})")));
    }
    if dataset.entries.len() < n {
        return Err(RetrievalError::ShortSet { needed: n, found: dataset.entries.len() });
    }
    let embedded = gateway.embed_text(query)?;
    let candidates = rank_fuse(similarity_topk(&embedded, dataset, index, k)?);
    contrastive_from_candidates(query, k, n, candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, MockBackend};
    use crate::store::build_index;

    fn entry(id: &str, question: &str, reward: f64) -> ExperienceEntry {
        ExperienceEntry {
            id: id.into(),
            dataset: "custom".into(),
            question: question.into(),
            answer: format!("answer of {id}"),
            reward,
            depth: 1,
            parent_trace_id: None,
            nl_description: None,
            evidence_digest: "e".into(),
        }
    }

    /// Dataset and index with hand-placed vectors, one entry per vector.
    fn fixture(vectors: &[(&str, f64, Vec<f32>)]) -> (MemoryDataset, VectorIndex) {
        let entries: Vec<ExperienceEntry> =
            vectors.iter().map(|(id, reward, _)| entry(id, &format!("question {id}"), *reward)).collect();
        let dataset = MemoryDataset::from_entries(entries);
        let mut remaining: std::collections::VecDeque<Vec<f32>> =
            vectors.iter().map(|(_, _, v)| v.clone()).collect();
        let index = build_index(&dataset, |_| Ok(remaining.pop_front().expect("one vector per entry")))
            .unwrap();
        (dataset, index)
    }

    fn unit(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).normalized().unwrap()
    }

    #[test]
    fn identical_vector_ranks_first_with_unit_similarity() {
        let (dataset, index) = fixture(&[
            ("a", 0.5, vec![1.0, 0.0, 0.0]),
            ("b", 0.5, vec![0.0, 1.0, 0.0]),
            ("c", 0.5, vec![0.6, 0.8, 0.0]),
        ]);
        let hits = similarity_topk(&unit(&[0.6, 0.8, 0.0]), &dataset, &index, 3).unwrap();
        assert_eq!(hits[0].entry.id, "c");
        assert_eq!(hits[0].rank_sim, 1);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let (dataset, index) = fixture(&[("a", 0.5, vec![1.0, 0.0])]);
        let hits = similarity_topk(&unit(&[0.0, 1.0]), &dataset, &index, 1).unwrap();
        assert!(hits[0].similarity.abs() < 1e-6);
    }

    #[test]
    fn ranking_matches_a_brute_force_oracle() {
        let vectors: Vec<(&str, f64, Vec<f32>)> = vec![
            ("e1", 0.1, vec![0.9, 0.1, 0.2]),
            ("e2", 0.2, vec![-0.4, 0.8, 0.1]),
            ("e3", 0.3, vec![0.5, 0.5, 0.5]),
            ("e4", 0.4, vec![0.1, -0.9, 0.3]),
            ("e5", 0.5, vec![0.7, 0.2, -0.6]),
        ];
        let (dataset, index) = fixture(&vectors);
        let query = unit(&[0.3, 0.4, 0.2]);

        let mut oracle: Vec<(String, f64)> = vectors
            .iter()
            .map(|(id, _, v)| {
                let e = EmbeddingVector::new(v.clone()).normalized().unwrap();
                (id.to_string(), query.dot(&e))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));

        let hits = similarity_topk(&query, &dataset, &index, 5).unwrap();
        for (hit, (id, sim)) in hits.iter().zip(&oracle) {
            assert_eq!(&hit.entry.id, id);
            assert!((hit.similarity - sim).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_ties_break_by_entry_id() {
        let (dataset, index) = fixture(&[
            ("z", 0.5, vec![1.0, 0.0]),
            ("a", 0.5, vec![1.0, 0.0]),
        ]);
        let hits = similarity_topk(&unit(&[1.0, 0.0]), &dataset, &index, 2).unwrap();
        assert_eq!(hits[0].entry.id, "a");
        assert_eq!(hits[1].entry.id, "z");
    }

    #[test]
    fn k_is_clamped_to_the_store_size() {
        let (dataset, index) = fixture(&[("a", 0.5, vec![1.0, 0.0])]);
        let hits = similarity_topk(&unit(&[1.0, 0.0]), &dataset, &index, 10).unwrap();
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn empty_store_and_stale_index_are_rejected() {
        let empty = MemoryDataset::from_entries(vec![]);
        let (_, index) = fixture(&[("a", 0.5, vec![1.0])]);
        assert!(matches!(
            similarity_topk(&unit(&[1.0]), &empty, &index, 1),
            Err(RetrievalError::EmptyStore)
        ));

        let (mut dataset, index) = fixture(&[("a", 0.5, vec![1.0])]);
        dataset.entries[0].reward = 0.9;
        assert!(matches!(
            similarity_topk(&unit(&[1.0]), &dataset, &index, 1),
            Err(RetrievalError::StaleIndex)
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (dataset, index) = fixture(&[("a", 0.5, vec![1.0, 0.0])]);
        assert!(matches!(
            similarity_topk(&unit(&[1.0, 0.0, 0.0]), &dataset, &index, 1),
            Err(RetrievalError::DimensionMismatch { query: 3, index: 2 })
        ));
    }

    /// Four candidates already in similarity order with the rewards that the
    /// fused ranks are hand-computed from.
    fn fused_fixture() -> Vec<RetrievalCandidate> {
        let rewards = [("A", 0.9), ("B", 0.1), ("C", 1.0), ("D", 0.0)];
        rank_fuse(
            rewards
                .iter()
                .enumerate()
                .map(|(i, (id, reward))| RetrievalCandidate {
                    entry: entry(id, &format!("q {id}"), *reward),
                    similarity: 1.0 - 0.1 * i as f64,
                    rank_sim: i + 1,
                    rank_reward: 0,
                    final_pos: 0.0,
                    final_neg: 0.0,
                })
                .collect(),
        )
    }

    #[test]
    fn fusion_matches_the_hand_computed_fixture() {
        let fused = fused_fixture();
        let by_id = |id: &str| fused.iter().find(|c| c.entry.id == id).unwrap();
        assert_eq!(by_id("C").rank_reward, 1);
        assert_eq!(by_id("A").rank_reward, 2);
        assert_eq!(by_id("B").rank_reward, 3);
        assert_eq!(by_id("D").rank_reward, 4);
        assert_eq!(by_id("A").final_pos, 1.5);
        assert_eq!(by_id("C").final_pos, 2.0);
        assert_eq!(by_id("B").final_pos, 2.5);
        assert_eq!(by_id("D").final_pos, 4.0);
        assert_eq!(by_id("A").final_neg, 2.0);
        assert_eq!(by_id("B").final_neg, 2.0);
        assert_eq!(by_id("D").final_neg, 2.5);
        assert_eq!(by_id("C").final_neg, 3.5);
    }

    #[test]
    fn contrastive_selection_orders_and_flags_overlap() {
        let set = contrastive_from_candidates("query", 4, 2, fused_fixture()).unwrap();
        let ids = |entries: &[ExperienceEntry]| -> Vec<String> {
            entries.iter().map(|e| e.id.clone()).collect()
        };
        assert_eq!(ids(&set.positives), ["A", "C"]);
        assert_eq!(ids(&set.negatives), ["A", "B"]);
        assert_eq!(set.overlap_ids, ["A"]);
    }

    #[test]
    fn full_positive_and_negative_orderings_match_the_fixture() {
        let set = contrastive_from_candidates("query", 4, 4, fused_fixture()).unwrap();
        let ids = |entries: &[ExperienceEntry]| -> Vec<String> {
            entries.iter().map(|e| e.id.clone()).collect()
        };
        assert_eq!(ids(&set.positives), ["A", "C", "B", "D"]);
        assert_eq!(ids(&set.negatives), ["A", "B", "D", "C"]);
        assert_eq!(set.overlap_ids.len(), 4, "n = k makes both sides the same entries");
    }

    #[test]
    fn equal_rewards_degenerate_to_similarity_order() {
        let candidates: Vec<RetrievalCandidate> = (0..4)
            .map(|i| RetrievalCandidate {
                entry: entry(&format!("e{i}"), "q", 0.5),
                similarity: 1.0 - 0.1 * i as f64,
                rank_sim: i + 1,
                rank_reward: 0,
                final_pos: 0.0,
                final_neg: 0.0,
            })
            .collect();
        let fused = rank_fuse(candidates);
        for c in &fused {
            assert_eq!(c.rank_reward, c.rank_sim);
            assert_eq!(c.final_pos, c.rank_sim as f64);
        }
    }

    #[test]
    fn single_entry_boundary_selects_it_on_both_sides() {
        let (dataset, index) = fixture(&[("only", 0.5, vec![1.0, 0.0])]);
        let gateway = Gateway::new(Box::new(MockBackend::new(7).with_dimension(2)));
        let set = retrieve_contrastive("anything", &gateway, &dataset, &index, 1, 1).unwrap();
        assert_eq!(set.positives[0].id, "only");
        assert_eq!(set.negatives[0].id, "only");
        assert_eq!(set.overlap_ids, ["only"]);
    }

    #[test]
    fn short_stores_and_bad_arguments_error() {
        let (dataset, index) = fixture(&[("a", 0.5, vec![1.0])]);
        let gateway = Gateway::new(Box::new(MockBackend::new(7).with_dimension(1)));
        assert!(matches!(
            retrieve_contrastive("q", &gateway, &dataset, &index, 4, 2),
            Err(RetrievalError::ShortSet { needed: 2, found: 1 })
        ));
        assert!(matches!(
            retrieve_contrastive("q", &gateway, &dataset, &index, 1, 0),
            Err(RetrievalError::InvalidArguments(_))
        ));
        assert!(matches!(
            retrieve_contrastive("q", &gateway, &dataset, &index, 1, 2),
            Err(RetrievalError::InvalidArguments(_))
        ));
        assert!(matches!(
            retrieve_contrastive("  ", &gateway, &dataset, &index, 1, 1),
            Err(RetrievalError::InvalidArguments(_))
        ));
    }

    #[test]
    fn retrieval_is_deterministic_end_to_end() {
        let entries: Vec<(&str, f64, Vec<f32>)> = vec![
            ("a", 0.2, vec![0.5, 0.5]),
            ("b", 0.9, vec![0.9, 0.1]),
            ("c", 0.4, vec![0.1, 0.9]),
        ];
        let (dataset, index) = fixture(&entries);
        let gateway = Gateway::new(Box::new(MockBackend::new(5).with_dimension(2)));
        let first = retrieve_contrastive("which rows?", &gateway, &dataset, &index, 3, 2).unwrap();
        let second = retrieve_contrastive("which rows?", &gateway, &dataset, &index, 3, 2).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
    }

    #[test]
    fn exact_question_match_drives_retrieval_through_the_gateway() {
        let backend = MockBackend::new(9);
        let entries: Vec<ExperienceEntry> = (0..5)
            .map(|i| entry(&format!("e{i}"), &format!("stored question {i}"), 0.1 * i as f64))
            .collect();
        let dataset = MemoryDataset::from_entries(entries);
        let index = build_index(&dataset, |text| backend.embed(text)).unwrap();
        let gateway = Gateway::new(Box::new(backend.clone()));
        let set = retrieve_contrastive("stored question 3", &gateway, &dataset, &index, 5, 2).unwrap();
        let top = set.candidates.iter().find(|c| c.rank_sim == 1).unwrap();
        assert_eq!(top.entry.id, "e3");
        assert!((top.similarity - 1.0).abs() < 1e-6);
    }
}
