//! Experience-guided reasoning over structured knowledge.
//!
//! The pipeline has four stages, one module each, plus shared plumbing:
//!
//! 1. [`mcts`] runs Monte Carlo Tree Search over a generative model to
//!    decompose a question into sub-question/answer steps, scoring each step
//!    with a blended consistency/self-evaluation reward and back-propagating
//!    roll-out outcomes into per-edge Q values. Finished trees are harvested
//!    into reward-labeled experience entries.
//! 2. [`store`] persists those entries as a schema-versioned JSON Lines file,
//!    attaches natural-language descriptions of SQL answers, and maintains an
//!    exact-search vector index beside the store.
//! 3. [`retrieve`] ranks stored entries against a new question by cosine
//!    similarity, re-ranks by reward, and fuses the two rankings to pick
//!    positive (high-reward) and negative (low-reward) exemplars.
//! 4. [`thinker`] renders those exemplars into contrastive prompts
//!    (single-round, two-round, or bootstrapped multi-turn) and drives the
//!    generative model to a final answer.
//!
//! [`gateway`] abstracts the generative model behind a chat-completions HTTP
//! backend and a deterministic mock backend, and [`eval`] scores predictions
//! (execution accuracy against SQLite for Text-to-SQL, normalized exact match
//! for TableQA) with stratified reports and reward-distribution statistics.

pub mod digest;
pub mod eval;
pub mod gateway;
pub mod mcts;
pub mod retrieve;
pub mod store;
pub mod thinker;

pub use eval::{
    answer_accuracy, execution_accuracy, reward_histogram, stratified_report, EvalError,
    EvalRecord, EvalReport, RewardHistogram,
};
pub use gateway::{
    AnswerFormat, Backend, BackendConfig, BackendKind, ChatTurn, EmbeddingVector, Gateway,
    GatewayError, MockBackend, Role, SamplingParams, SelfEvalMode,
};
pub use mcts::{
    backpropagate, extract_best_trace, harvest_experience, local_reward, select_path, uct_score,
    ReasoningState, Rollout, SearchConfig, SearchError, SearchTree, Trajectory, TreeNode,
    TreeSearch,
};
pub use retrieve::{
    rank_fuse, retrieve_contrastive, similarity_topk, ContrastiveSet, RetrievalCandidate,
    RetrievalError,
};
pub use store::{
    annotate_descriptions, append_entries, build_index, describe_structured_answer, load_store,
    AnswerKind, ExperienceEntry, MemoryDataset, StoreError, VectorIndex,
};
pub use thinker::{
    bootstrap, compose_prompt, solve_single_round, solve_two_round, BootstrapOutcome,
    ComposeError, ComposedPrompt, PromptMode, PromptPlan, PromptSlots, SolveError, SolveOutcome,
    TaskKind, TwoRoundOutcome,
};
