//! Scoring of solved tasks and health statistics over experience stores.
//!
//! Text-to-SQL predictions score by executing gold and predicted statements
//! against the task's SQLite database and comparing result multisets. TableQA
//! predictions score by normalized exact match. Reports stratify accuracy by
//! difficulty, and reward histograms summarize store quality.

mod answers;
mod exec;
mod report;

pub use answers::{answers_match, normalize_answer, numbers_match, parse_number, ANSWER_TOLERANCE};
pub use exec::{
    answer_accuracy, execution_accuracy, execution_accuracy_with_timeout, EvalError,
    CELL_TOLERANCE, STATEMENT_TIMEOUT,
};
pub use report::{
    reward_histogram, stratified_report, Difficulty, EvalRecord, EvalReport, FailureKind,
    RewardHistogram, StratumStats,
};
