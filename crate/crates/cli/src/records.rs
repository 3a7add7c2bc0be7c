//! Line-oriented input and output records.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coreason::eval::Difficulty;
use coreason::thinker::PromptMode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One task item: the question, where its evidence lives, and (for scoring)
/// the gold answer, difficulty label, and database file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_path: Option<PathBuf>,
}

impl QuestionRecord {
    /// Reads the record's evidence file, resolving a relative path against
    /// the directory the questions file came from.
    pub fn read_evidence(&self, base_dir: &Path) -> Result<String> {
        let Some(path) = &self.evidence_path else {
            bail!("question {} has no evidence_path", self.id);
        };
        let resolved = resolve(base_dir, path);
        let text = fs::read_to_string(&resolved)
            .with_context(|| format!("reading evidence {} for question {}", resolved.display(), self.id))?;
        Ok(text.trim_end().to_string())
    }

    pub fn resolved_db_path(&self, base_dir: &Path) -> Option<PathBuf> {
        self.db_path.as_ref().map(|p| resolve(base_dir, p))
    }
}

fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// One answered question as written by `solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub mode: PromptMode,
    /// Model exchanges that produced the answer (bootstrap rounds or 1/2).
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_digest: Option<String>,
}

/// Reads a JSON Lines file, reporting the line number of the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(item)?);
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn questions_round_trip_through_jsonl() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("questions.jsonl");
        let records = vec![
            QuestionRecord {
                id: "q1".into(),
                question: "How many?".into(),
                evidence_path: Some("schema.txt".into()),
                gold: Some("SELECT 1".into()),
                difficulty: Some(Difficulty::Simple),
                db_path: None,
            },
            QuestionRecord {
                id: "q2".into(),
                question: "Which one?".into(),
                evidence_path: None,
                gold: None,
                difficulty: None,
                db_path: None,
            },
        ];
        write_jsonl(&path, &records).unwrap();
        let loaded: Vec<QuestionRecord> = read_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].gold.as_deref(), Some("SELECT 1"));
        assert_eq!(loaded[1].difficulty, None);
    }

    #[test]
    fn bad_lines_are_reported_with_their_number() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("questions.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"question\":\"x\"}\nnot json\n").unwrap();
        let err = read_jsonl::<QuestionRecord>(&path).unwrap_err();
        assert!(format!("{err:#}").contains("line 2"));
    }

    #[test]
    fn evidence_resolves_relative_to_the_questions_file() {
        let dir = tempfile::TempDir::new().unwrap();
        fs::write(dir.path().join("ev.txt"), "CREATE TABLE t (x int)\n").unwrap();
        let record = QuestionRecord {
            id: "q".into(),
            question: "?".into(),
            evidence_path: Some("ev.txt".into()),
            gold: None,
            difficulty: None,
            db_path: None,
        };
        assert_eq!(record.read_evidence(dir.path()).unwrap(), "CREATE TABLE t (x int)");
    }
}
