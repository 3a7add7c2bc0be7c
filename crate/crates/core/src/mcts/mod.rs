//! Monte Carlo Tree Search over a generative model.
//!
//! A search decomposes one question into sub-question/answer steps. Each
//! roll-out selects a frontier by upper-confidence scores, expands it into
//! candidate sub-questions, descends by the highest local reward until a
//! concluding answer or the depth limit, and back-propagates the roll-out's
//! suffix-averaged rewards as Q values. Finished trees are harvested into
//! reward-labeled experience entries.

mod tree;

pub use tree::{ReasoningState, SearchTree, Trajectory, TreeNode, TREE_SCHEMA, TREE_VERSION};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::short_id;
use crate::eval::answers_match;
use crate::gateway::{ChatTurn, Gateway, GatewayError, SamplingParams, FINAL_ANSWER_MARKER, TERMINAL_MARKER};
use crate::store::ExperienceEntry;

/// Dataset tag harvested entries carry until a caller overrides it.
pub const DEFAULT_DATASET: &str = "custom";

/// Search hyperparameters. `d` is the candidate sub-questions per expansion,
/// `n_rollouts` the roll-out count, `max_depth` the step limit per
/// trajectory, `w` the exploration weight, `alpha` the blend between the
/// consistency reward and the self-evaluation reward, and `visit_threshold`
/// the minimum visits for a node to be harvested with its Q value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub d: usize,
    pub n_rollouts: usize,
    pub max_depth: usize,
    pub w: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub visit_threshold: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            d: 4,
            n_rollouts: 10,
            max_depth: 5,
            w: 0.5,
            alpha: 0.5,
            temperature: 0.8,
            visit_threshold: 3,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.d == 0 {
            return Err(SearchError::InvalidConfig("d must be >= 1".into()));
        }
        if self.n_rollouts == 0 {
            return Err(SearchError::InvalidConfig("n_rollouts must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(SearchError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if !self.w.is_finite() || self.w < 0.0 {
            return Err(SearchError::InvalidConfig(format!("w {} must be finite and >= 0", self.w)));
        }
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(SearchError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(SearchError::InvalidConfig(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        if self.visit_threshold == 0 {
            return Err(SearchError::InvalidConfig("visit_threshold must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("invalid search input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("expansion of node {node} produced no usable children")]
    EmptyExpansion { node: usize },
    #[error("back-propagation misalignment: {edges} path edges but {rewards} rewards")]
    MisalignedRewards { edges: usize, rewards: usize },
    #[error("all {attempted} roll-outs failed; last error: {last_error}")]
    AllRolloutsFailed { attempted: usize, last_error: String },
    #[error("tree file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("tree file format: {0}")]
    Format(String),
}

/// Upper-confidence score of a visited child: Q + w·sqrt(ln N(parent) / N(child)).
pub fn uct_score(q_value: f64, parent_visits: u32, child_visits: u32, w: f64) -> f64 {
    q_value + w * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

/// Descends from the root while the current node has been visited and has
/// children, picking any unvisited child first and otherwise the highest
/// upper-confidence child (ties to the lowest index). Increments the visit
/// count of every node on the returned path.
pub fn select_path(tree: &mut SearchTree, config: &SearchConfig) -> Vec<usize> {
    let mut path = vec![tree.root_id()];
    let mut current = tree.root_id();
    while tree.node(current).visits > 0 && !tree.node(current).children.is_empty() {
        let parent_visits = tree.node(current).visits;
        let children = &tree.node(current).children;
        let next = match children.iter().find(|&&c| tree.node(c).visits == 0) {
            Some(&unvisited) => unvisited,
            None => {
                let mut best = children[0];
                let mut best_score = f64::NEG_INFINITY;
                for &child in children {
                    let node = tree.node(child);
                    let score = uct_score(node.q_value, parent_visits, node.visits, config.w);
                    if score > best_score {
                        best_score = score;
                        best = child;
                    }
                }
                best
            }
        };
        path.push(next);
        current = next;
    }
    for &id in &path {
        tree.node_mut(id).visits += 1;
    }
    path
}

/// Blended local reward f_r = r1^alpha · r2^(1-alpha), where r1 is the
/// frequency of the chosen candidate among all candidates (case- and
/// whitespace-insensitive) and r2 the self-evaluation probability.
pub fn local_reward(candidates: &[String], chosen_index: usize, r2: f64, alpha: f64) -> f64 {
    let chosen = normalize_candidate(&candidates[chosen_index]);
    let count = candidates.iter().filter(|c| normalize_candidate(c) == chosen).count();
    let r1 = count as f64 / candidates.len() as f64;
    if r1 == r2 {
        // r^alpha * r^(1-alpha) = r algebraically; keep it exact in floats too.
        return r1;
    }
    r1.powf(alpha) * r2.powf(1.0 - alpha)
}

fn normalize_candidate(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Folds one roll-out's edge rewards into Q values: each edge takes the
/// average of the rewards from itself to the roll-out's end, and keeps the
/// maximum such value over all roll-outs through it.
pub fn backpropagate(
    tree: &mut SearchTree,
    path: &[usize],
    edge_rewards: &[f64],
) -> Result<(), SearchError> {
    if path.len() != edge_rewards.len() + 1 {
        return Err(SearchError::MisalignedRewards {
            edges: path.len().saturating_sub(1),
            rewards: edge_rewards.len(),
        });
    }
    for j in 0..edge_rewards.len() {
        let suffix = &edge_rewards[j..];
        let candidate = suffix.iter().sum::<f64>() / suffix.len() as f64;
        let node = tree.node_mut(path[j + 1]);
        node.q_value = node.q_value.max(candidate);
    }
    Ok(())
}

/// Greedy Q-value descent from the root: highest Q wins, ties go to the more
/// visited child, then the lower index. Stops at the first childless node,
/// which may be non-terminal when no concluding state was ever reached.
pub fn extract_best_trace(tree: &SearchTree) -> Trajectory {
    let mut states = Vec::new();
    let mut current = tree.root_id();
    loop {
        let children = &tree.node(current).children;
        if children.is_empty() {
            break;
        }
        let mut best = children[0];
        for &child in &children[1..] {
            let (b, c) = (tree.node(best), tree.node(child));
            if c.q_value > b.q_value || (c.q_value == b.q_value && c.visits > b.visits) {
                best = child;
            }
        }
        states.push(tree.node(best).state.clone());
        current = best;
        if tree.node(current).state.is_terminal {
            break;
        }
    }
    let final_answer = states.last().map(ReasoningState::final_answer).unwrap_or_default();
    let overall_success = tree.gold.as_deref().map(|gold| answers_match(gold, &final_answer));
    Trajectory { states, final_answer, overall_success }
}

/// Turns a finished tree into experience entries: every non-root node with
/// enough visits contributes its step at reward Q, and when a gold answer is
/// known, every rolled-out concluding trajectory contributes its steps at
/// reward 1.0 (final answer matches gold) or 0.0 (it does not). Duplicate
/// (question, answer) pairs keep the highest reward.
pub fn harvest_experience(
    tree: &SearchTree,
    config: &SearchConfig,
    gold: Option<&str>,
) -> Vec<ExperienceEntry> {
    let evidence_digest = short_id(&[tree.evidence.as_str()]);
    let make = |state: &ReasoningState, reward: f64| ExperienceEntry {
        id: short_id(&["exp", &tree.trace_id, &state.question, &state.answer]),
        dataset: DEFAULT_DATASET.to_string(),
        question: state.question.clone(),
        answer: state.answer.clone(),
        reward,
        depth: state.depth,
        parent_trace_id: Some(tree.trace_id.clone()),
        nl_description: None,
        evidence_digest: evidence_digest.clone(),
    };

    let mut raw = Vec::new();
    for node in tree.nodes.iter().skip(1) {
        if node.visits >= config.visit_threshold {
            raw.push(make(&node.state, node.q_value.clamp(0.0, 1.0)));
        }
    }
    if let Some(gold) = gold {
        for node in tree.nodes.iter().skip(1) {
            if node.visits == 0 || !node.state.has_final_answer() {
                continue;
            }
            let reward = if answers_match(gold, &node.state.final_answer()) { 1.0 } else { 0.0 };
            for &step in tree.path_to(node.id).iter().skip(1) {
                raw.push(make(&tree.node(step).state, reward));
            }
        }
    }

    let mut by_step: HashMap<(String, String), usize> = HashMap::new();
    let mut entries: Vec<ExperienceEntry> = Vec::new();
    for entry in raw {
        let key = (entry.question.clone(), entry.answer.clone());
        match by_step.get(&key) {
            Some(&i) => {
                if entry.reward > entries[i].reward {
                    entries[i].reward = entry.reward;
                }
            }
            None => {
                by_step.insert(key, entries.len());
                entries.push(entry);
            }
        }
    }
    entries
}

/// Result of one simulation descent. When `failure` is set, the descent was
/// cut short and `descended` holds only the nodes reached before the error.
#[derive(Debug)]
pub struct Rollout {
    /// Node ids descended into, in order, starting below the frontier.
    pub descended: Vec<usize>,
    pub failure: Option<SearchError>,
}

/// Drives a full search for one question against a gateway.
pub struct TreeSearch<'a> {
    gateway: &'a Gateway,
    config: SearchConfig,
}

impl<'a> TreeSearch<'a> {
    pub fn new(gateway: &'a Gateway, config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(TreeSearch { gateway, config })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    /// Runs the configured number of roll-outs and returns the materialized
    /// tree. Individual roll-out failures back-propagate the rewards they
    /// collected before erroring; the search as a whole fails only when
    /// every roll-out failed.
    pub fn run_search(
        &self,
        question: &str,
        evidence: &str,
        gold: Option<&str>,
    ) -> Result<SearchTree, SearchError> {
        if question.trim().is_empty() {
            return Err(SearchError::InvalidInput("question must be non-empty".into()));
        }
        let mut tree = SearchTree::new(question, evidence, gold);
        let mut completed = 0usize;
        let mut last_error = None;
        for _ in 0..self.config.n_rollouts {
            let mut path = select_path(&mut tree, &self.config);
            let frontier = *path.last().expect("selection path includes the root");
            let failure = if tree.node(frontier).state.is_terminal {
                None
            } else {
                let rollout = self.simulate(&mut tree, frontier);
                path.extend(&rollout.descended);
                rollout.failure
            };
            let rewards: Vec<f64> =
                path.iter().skip(1).map(|&id| tree.node(id).edge_reward).collect();
            backpropagate(&mut tree, &path, &rewards)?;
            match failure {
                None => completed += 1,
                Some(err) => {
                    log::warn!("roll-out failed after {} steps: {err}", rollout_depth(&path));
                    last_error = Some(err);
                }
            }
        }
        if completed == 0 {
            return Err(SearchError::AllRolloutsFailed {
                attempted: self.config.n_rollouts,
                last_error: last_error.map(|e| e.to_string()).unwrap_or_default(),
            });
        }
        Ok(tree)
    }

    /// Generates `d` candidate sub-questions under `node`, answers each, and
    /// attaches the answered candidates as children scored with the blended
    /// local reward. Terminal nodes are never expanded. Self-evaluation runs
    /// once per distinct candidate string.
    pub fn expand(&self, tree: &mut SearchTree, node: usize) -> Result<Vec<usize>, SearchError> {
        if tree.node(node).state.is_terminal {
            return Ok(Vec::new());
        }
        let context = self.reasoning_context(tree, node);
        let params = SamplingParams::sampled(self.config.temperature);
        let candidates =
            self.gateway.generate_subquestions(&context, &tree.evidence, self.config.d, &params)?;

        let mut answered: Vec<(usize, String)> = Vec::new();
        for (i, candidate) in candidates.iter().enumerate() {
            match self.gateway.answer_subquestion(&context, candidate, &params) {
                Ok(answer) => answered.push((i, answer)),
                Err(err) => log::warn!("candidate {i} failed to answer, dropping it: {err}"),
            }
        }
        if answered.is_empty() {
            return Err(SearchError::EmptyExpansion { node });
        }

        let mut r2_cache: HashMap<String, f64> = HashMap::new();
        let depth = tree.node(node).state.depth + 1;
        let mut children = Vec::with_capacity(answered.len());
        for (i, answer) in answered {
            let candidate = &candidates[i];
            let r2 = match r2_cache.get(candidate) {
                Some(&p) => p,
                None => {
                    let p = self.gateway.self_evaluate(candidate, &answer)?;
                    r2_cache.insert(candidate.clone(), p);
                    p
                }
            };
            let reward = local_reward(&candidates, i, r2, self.config.alpha);
            let state = ReasoningState::new(candidate.clone(), answer, depth, self.config.max_depth);
            children.push(tree.add_child(node, state, reward));
        }
        Ok(children)
    }

    /// Repeatedly expands and descends into the highest-rewarded child until
    /// a terminal state or the depth limit, incrementing visit counts along
    /// the way. Errors stop the descent but keep what was already built.
    pub fn simulate(&self, tree: &mut SearchTree, from: usize) -> Rollout {
        let mut descended = Vec::new();
        let mut current = from;
        while !tree.node(current).state.is_terminal {
            let children = if tree.node(current).children.is_empty() {
                match self.expand(tree, current) {
                    Ok(children) => children,
                    Err(err) => return Rollout { descended, failure: Some(err) },
                }
            } else {
                tree.node(current).children.clone()
            };
            let mut best = children[0];
            for &child in &children[1..] {
                if tree.node(child).edge_reward > tree.node(best).edge_reward {
                    best = child;
                }
            }
            tree.node_mut(best).visits += 1;
            descended.push(best);
            current = best;
        }
        Rollout { descended, failure: None }
    }

    /// The chat context for a node: the overall question followed by the
    /// sub-question/answer steps on the path from the root.
    fn reasoning_context(&self, tree: &SearchTree, node: usize) -> Vec<ChatTurn> {
        let mut body = format!("[Question]\n{}\n", tree.question);
        for (k, &id) in tree.path_to(node).iter().skip(1).enumerate() {
            let state = &tree.node(id).state;
            body.push_str(&format!("\nStep {}: {}\nAnswer: {}\n", k + 1, state.question, state.answer));
        }
        vec![
            ChatTurn::system(format!(
                "You answer questions over structured data by decomposing them into small \
                 sequential sub-questions. When the recorded steps already determine the final \
                 answer, begin the concluding sub-question with \"{TERMINAL_MARKER}\" and state \
                 the result prefixed with \"{FINAL_ANSWER_MARKER}\".",
            )),
            ChatTurn::user(body),
        ]
    }
}

fn rollout_depth(path: &[usize]) -> usize {
    path.len().saturating_sub(1)
}
