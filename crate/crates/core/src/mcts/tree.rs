//! Search tree arena and its on-disk form.
//!
//! Nodes live in a flat vector and refer to each other by index, so the whole
//! tree serializes as one self-contained JSON document suitable for audit and
//! replay. The root holds the overall question with an empty answer; every
//! other node holds one sub-question/answer step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::digest::short_id;
use crate::gateway::FINAL_ANSWER_MARKER;

/// Schema tag of serialized tree files.
pub const TREE_SCHEMA: &str = "search-tree";

/// Current tree file version.
pub const TREE_VERSION: u32 = 1;

/// One reasoning step: a sub-question and the answer the generator gave it.
/// Depth 0 is reserved for the root, which holds the overall question and an
/// empty answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningState {
    pub question: String,
    pub answer: String,
    pub depth: usize,
    pub is_terminal: bool,
}

impl ReasoningState {
    /// A state concludes the trajectory when its answer carries the
    /// final-answer marker or it sits at the depth limit.
    pub fn new(question: String, answer: String, depth: usize, max_depth: usize) -> Self {
        let is_terminal = depth >= max_depth || answer.contains(FINAL_ANSWER_MARKER);
        ReasoningState { question, answer, depth, is_terminal }
    }

    /// Whether the answer explicitly concludes (as opposed to a depth cutoff).
    pub fn has_final_answer(&self) -> bool {
        self.answer.contains(FINAL_ANSWER_MARKER)
    }

    /// The text after the final-answer marker, or the whole trimmed answer
    /// when no marker is present.
    pub fn final_answer(&self) -> String {
        match self.answer.split_once(FINAL_ANSWER_MARKER) {
            Some((_, rest)) => rest.trim().to_string(),
            None => self.answer.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent_id: Option<usize>,
    pub state: ReasoningState,
    /// Number of roll-outs whose path traversed this node.
    pub visits: u32,
    /// Max over roll-outs of the average reward from this edge to the end of
    /// the roll-out; 0 until the first back-propagation.
    pub q_value: f64,
    /// Local reward of the edge into this node, fixed at creation.
    pub edge_reward: f64,
    /// Child ids in creation order.
    pub children: Vec<usize>,
}

/// A complete search tree for one question, serializable as a single file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub schema: String,
    pub version: u32,
    /// Stable id of this search, used to link harvested entries back here.
    pub trace_id: String,
    pub question: String,
    pub evidence: String,
    pub gold: Option<String>,
    pub nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new(question: &str, evidence: &str, gold: Option<&str>) -> Self {
        let root = TreeNode {
            id: 0,
            parent_id: None,
            state: ReasoningState {
                question: question.to_string(),
                answer: String::new(),
                depth: 0,
                is_terminal: false,
            },
            visits: 0,
            q_value: 0.0,
            edge_reward: 0.0,
            children: Vec::new(),
        };
        SearchTree {
            schema: TREE_SCHEMA.to_string(),
            version: TREE_VERSION,
            trace_id: short_id(&["trace", question, evidence]),
            question: question.to_string(),
            evidence: evidence.to_string(),
            gold: gold.map(str::to_string),
            nodes: vec![root],
        }
    }

    pub fn root_id(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a child under `parent_id` and returns the new node's id.
    pub fn add_child(&mut self, parent_id: usize, state: ReasoningState, edge_reward: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            parent_id: Some(parent_id),
            state,
            visits: 0,
            q_value: 0.0,
            edge_reward,
            children: Vec::new(),
        });
        self.nodes[parent_id].children.push(id);
        id
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut current = id;
        while let Some(parent) = self.nodes[current].parent_id {
            path.push(parent);
            current = parent;
        }
        path.reverse();
        path
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("tree serialization is infallible");
        text.push('\n');
        text
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SearchError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<SearchTree, SearchError> {
        let text = fs::read_to_string(path)?;
        let tree: SearchTree = serde_json::from_str(&text)
            .map_err(|e| SearchError::Format(format!("{}: {e}", path.display())))?;
        if tree.schema != TREE_SCHEMA {
            return Err(SearchError::Format(format!(
                "{}: schema {:?} is not {TREE_SCHEMA:?}",
                path.display(),
                tree.schema
            )));
        }
        if tree.version != TREE_VERSION {
            return Err(SearchError::Format(format!(
                "{}: version {} is not supported (expected {TREE_VERSION})",
                path.display(),
                tree.version
            )));
        }
        if tree.nodes.is_empty() {
            return Err(SearchError::Format(format!("{}: tree has no root", path.display())));
        }
        Ok(tree)
    }
}

/// The chain of steps a greedy Q-descent selects, root excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ReasoningState>,
    pub final_answer: String,
    /// Whether the final answer matches the gold answer, when one is known.
    pub overall_success: Option<bool>,
}

impl Trajectory {
    /// True when the trajectory actually reached a concluding state rather
    /// than stopping at the deepest scored prefix.
    pub fn is_complete(&self) -> bool {
        self.states.last().is_some_and(|s| s.is_terminal)
    }
}
