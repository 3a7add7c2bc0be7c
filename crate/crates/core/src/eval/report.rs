//! Evaluation records, stratified reports, and reward-distribution stats.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::store::MemoryDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ExecError,
    Mismatch,
    ParseError,
}

/// One question's gold answer and prediction, plus the scoring outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub predicted: String,
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
    #[serde(default)]
    pub db_path: Option<PathBuf>,
    #[serde(default)]
    pub correct: bool,
    #[serde(default)]
    pub failure_kind: Option<FailureKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

/// Accuracy overall and per difficulty stratum. `overall_accuracy` is absent
/// (not zero) for an empty input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub overall_accuracy: Option<f64>,
    pub per_difficulty: BTreeMap<String, StratumStats>,
    pub failures: Vec<EvalRecord>,
}

impl EvalReport {
    /// Plain-text table for the operator; data consumers read the JSON form.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>6} {:>8} {:>9}\n", "stratum", "count", "correct", "accuracy"));
        for (name, stats) in &self.per_difficulty {
            out.push_str(&format!(
                "{:<14} {:>6} {:>8} {:>9}\n",
                name,
                stats.count,
                stats.correct,
                format_accuracy(stats.accuracy)
            ));
        }
        let correct_total: usize = self.per_difficulty.values().map(|s| s.correct).sum();
        out.push_str(&format!(
            "{:<14} {:>6} {:>8} {:>9}\n",
            "overall",
            self.total,
            correct_total,
            format_accuracy(self.overall_accuracy)
        ));
        out
    }
}

fn format_accuracy(accuracy: Option<f64>) -> String {
    match accuracy {
        Some(a) => format!("{:.1}%", a * 100.0),
        None => "n/a".to_string(),
    }
}

/// Aggregates already-scored records into per-stratum and overall accuracy.
/// Records without a difficulty label form a first-class "unlabeled" stratum.
pub fn stratified_report(records: &[EvalRecord]) -> EvalReport {
    let mut per_difficulty: BTreeMap<String, StratumStats> = BTreeMap::new();
    let mut correct_total = 0usize;
    for record in records {
        let key = record
            .difficulty
            .as_ref()
            .map(|d| d.as_str().to_string())
            .unwrap_or_else(|| "unlabeled".to_string());
        let stats = per_difficulty
            .entry(key)
            .or_insert(StratumStats { count: 0, correct: 0, accuracy: None });
        stats.count += 1;
        if record.correct {
            stats.correct += 1;
            correct_total += 1;
        }
    }
    for stats in per_difficulty.values_mut() {
        stats.accuracy = (stats.count > 0).then(|| stats.correct as f64 / stats.count as f64);
    }
    EvalReport {
        total: records.len(),
        overall_accuracy: (!records.is_empty()).then(|| correct_total as f64 / records.len() as f64),
        per_difficulty,
        failures: records.iter().filter(|r| !r.correct).cloned().collect(),
    }
}

/// Reward-label distribution over ten uniform bins (the last bin includes
/// 1.0), plus how far harvesting multiplied the source questions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: usize,
    pub distinct_sources: usize,
    pub expansion_factor: f64,
}

impl RewardHistogram {
    /// Two-column CSV ready for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], count));
        }
        out
    }
}

pub fn reward_histogram(dataset: &MemoryDataset) -> RewardHistogram {
    let mut counts = vec![0u64; 10];
    for entry in &dataset.entries {
        let bin = ((entry.reward * 10.0).floor() as usize).min(9);
        counts[bin] += 1;
    }
    let sources: HashSet<&str> = dataset
        .entries
        .iter()
        .filter_map(|e| e.parent_trace_id.as_deref())
        .collect();
    let distinct_sources = sources.len();
    let expansion_factor = if distinct_sources == 0 {
        0.0
    } else {
        dataset.entries.len() as f64 / distinct_sources as f64
    };
    RewardHistogram {
        bin_edges: (0..=10).map(|i| i as f64 / 10.0).collect(),
        counts,
        total: dataset.entries.len(),
        distinct_sources,
        expansion_factor,
    }
}
