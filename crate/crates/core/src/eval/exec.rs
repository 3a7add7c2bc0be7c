//! Execution accuracy for Text-to-SQL and exact-match accuracy for TableQA.
//!
//! Each record's gold and predicted statements run against the record's own
//! SQLite database over a read-only connection with a per-statement timeout.
//! Result sets compare as multisets of rows (row order free, column order
//! fixed) with numeric cells at a small relative tolerance.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use thiserror::Error;

use super::answers::{answers_match, numbers_match};
use super::report::{stratified_report, EvalRecord, EvalReport, FailureKind};

/// Per-statement execution budget.
pub const STATEMENT_TIMEOUT: Duration = Duration::from_secs(30);

/// Relative tolerance for numeric SQL cells.
pub const CELL_TOLERANCE: f64 = 1e-6;

/// Beyond this many rows, near-equal float matching is skipped and only the
/// exact multiset comparison applies (keeps runaway predictions from turning
/// the comparison quadratic).
const TOLERANT_MATCH_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record {id}: text2sql evaluation requires a database path")]
    MissingDb { id: String },
    #[error("record {id}: fixture problem: {detail}")]
    Fixture { id: String, detail: String },
}

/// Scores Text-to-SQL records by executing gold and predicted SQL. A failing
/// gold statement is a fixture error and aborts; a failing prediction is an
/// incorrect record with `failure_kind = exec_error`.
pub fn execution_accuracy(records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    execution_accuracy_with_timeout(records, STATEMENT_TIMEOUT)
}

/// As [`execution_accuracy`] with an explicit per-statement timeout.
pub fn execution_accuracy_with_timeout(
    records: &[EvalRecord],
    timeout: Duration,
) -> Result<EvalReport, EvalError> {
    let scored: Vec<EvalRecord> = records
        .par_iter()
        .map(|record| score_sql_record(record, timeout))
        .collect::<Result<_, _>>()?;
    Ok(stratified_report(&scored))
}

/// Scores TableQA records by normalized exact match of free-form answers.
pub fn answer_accuracy(records: &[EvalRecord]) -> EvalReport {
    let scored: Vec<EvalRecord> = records
        .iter()
        .map(|record| {
            let correct = answers_match(&record.gold, &record.predicted);
            EvalRecord {
                correct,
                failure_kind: (!correct).then_some(FailureKind::Mismatch),
                ..record.clone()
            }
        })
        .collect();
    stratified_report(&scored)
}

fn score_sql_record(record: &EvalRecord, timeout: Duration) -> Result<EvalRecord, EvalError> {
    let db_path = record
        .db_path
        .as_deref()
        .ok_or_else(|| EvalError::MissingDb { id: record.id.clone() })?;
    let conn = open_read_only(db_path).map_err(|e| EvalError::Fixture {
        id: record.id.clone(),
        detail: format!("cannot open {}: {e}", db_path.display()),
    })?;

    let gold_rows = run_query(&conn, &record.gold, timeout).map_err(|e| EvalError::Fixture {
        id: record.id.clone(),
        detail: format!("gold statement failed: {e}"),
    })?;

    let mut scored = record.clone();
    if record.predicted.trim().is_empty() {
        scored.correct = false;
        scored.failure_kind = Some(FailureKind::ParseError);
        return Ok(scored);
    }
    match run_query(&conn, &record.predicted, timeout) {
        Ok(pred_rows) => {
            scored.correct = results_equal(&gold_rows, &pred_rows);
            scored.failure_kind = (!scored.correct).then_some(FailureKind::Mismatch);
        }
        Err(_) => {
            scored.correct = false;
            scored.failure_kind = Some(FailureKind::ExecError);
        }
    }
    Ok(scored)
}

fn open_read_only(path: &Path) -> Result<Connection, rusqlite::Error> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn from_ref(value: ValueRef<'_>) -> Cell {
        match value {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(r) => Cell::Real(r),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }

    /// Stable key for exact multiset comparison; floats key by bit pattern.
    fn canonical_key(&self) -> String {
        match self {
            Cell::Null => "n".to_string(),
            Cell::Int(i) => format!("i{i}"),
            Cell::Real(r) => format!("r{}", r.to_bits()),
            Cell::Text(t) => format!("t{t}"),
            Cell::Blob(b) => format!("b{b:?}"),
        }
    }
}

fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> Result<Vec<Vec<Cell>>, rusqlite::Error> {
    let start = Instant::now();
    conn.progress_handler(5_000, Some(move || start.elapsed() >= timeout));
    let result = (|| {
        let mut stmt = conn.prepare(sql)?;
        let column_count = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(column_count);
            for i in 0..column_count {
                cells.push(Cell::from_ref(row.get_ref(i)?));
            }
            out.push(cells);
        }
        Ok(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result
}

/// Row-order-insensitive, column-order-sensitive multiset equality. The fast
/// path compares exact canonical keys; when floats differ only by formatting
/// noise, a greedy tolerant matching decides (adequate at tolerance scale,
/// where candidate rows rarely overlap ambiguously).
fn results_equal(gold: &[Vec<Cell>], predicted: &[Vec<Cell>]) -> bool {
    if gold.len() != predicted.len() {
        return false;
    }
    if multiset_keys(gold) == multiset_keys(predicted) {
        return true;
    }
    if gold.len() > TOLERANT_MATCH_CAP {
        return false;
    }
    let mut used = vec![false; predicted.len()];
    'gold: for g in gold {
        for (i, p) in predicted.iter().enumerate() {
            if !used[i] && rows_equal(g, p) {
                used[i] = true;
                continue 'gold;
            }
        }
        return false;
    }
    true
}

fn multiset_keys(rows: &[Vec<Cell>]) -> std::collections::BTreeMap<String, usize> {
    let mut keys = std::collections::BTreeMap::new();
    for row in rows {
        let key = row.iter().map(Cell::canonical_key).collect::<Vec<_>>().join("\u{1f}");
        *keys.entry(key).or_insert(0) += 1;
    }
    keys
}

fn rows_equal(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

/// Numeric cells compare across the integer/real divide at tolerance; all
/// other comparisons are exact with no cross-type coercion.
fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Int(x), Cell::Real(y)) | (Cell::Real(y), Cell::Int(x)) => {
            numbers_match(*x as f64, *y, CELL_TOLERANCE)
        }
        (Cell::Real(x), Cell::Real(y)) => numbers_match(*x, *y, CELL_TOLERANCE),
        _ => a == b,
    }
}
