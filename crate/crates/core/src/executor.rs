//! Read-only SQL execution and execution-accuracy verdicts.
//!
//! Result comparison follows bag semantics: duplicate rows count, column
//! order is significant, and row order only matters when the gold query has
//! a top-level `ORDER BY`. Integers and reals compare numerically within an
//! absolute tolerance.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::dataset::BenchmarkExample;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_FLOAT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("cannot open database {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("gold query of example `{example}` does not execute: {message}")]
    GoldFailed { example: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl From<ValueRef<'_>> for Cell {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Integer(i),
            ValueRef::Real(f) => Cell::Real(f),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub column_count: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(column_count: usize, rows: Vec<Vec<Cell>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == column_count));
        ResultTable { column_count, rows }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub elapsed_ms: u64,
}

impl ExecOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// Human-readable failure text, used as refinement feedback.
    pub fn failure_text(&self) -> Option<String> {
        match self.status {
            ExecStatus::Ok => None,
            ExecStatus::SqlError => self.error_message.clone(),
            ExecStatus::Timeout => Some(format!("query timed out after {} ms", self.elapsed_ms)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub equal: bool,
    pub order_sensitive: bool,
    pub reason: String,
}

impl ComparisonVerdict {
    fn equal(order_sensitive: bool) -> Self {
        ComparisonVerdict {
            equal: true,
            order_sensitive,
            reason: String::new(),
        }
    }

    fn differ(order_sensitive: bool, reason: impl Into<String>) -> Self {
        ComparisonVerdict {
            equal: false,
            order_sensitive,
            reason: reason.into(),
        }
    }
}

/// Handle on one SQLite database file plus execution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlRunner {
    pub db_path: PathBuf,
    pub timeout_ms: u64,
}

impl SqlRunner {
    pub fn new(db_path: impl Into<PathBuf>) -> Self {
        SqlRunner {
            db_path: db_path.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn with_timeout(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn execute(&self, sql: &str) -> Result<ExecOutcome, ExecError> {
        execute_sql(&self.db_path, sql, self.timeout_ms)
    }
}

fn open_read_only(db_path: &Path) -> Result<Connection, ExecError> {
    let io = |message: String| ExecError::Io {
        path: db_path.to_path_buf(),
        message,
    };
    if !db_path.is_file() {
        return Err(io("no such file".into()));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| io(e.to_string()))?;
    // Forces the header to be read so corrupt or non-database files surface here.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |_| Ok(()))
        .map_err(|e| io(e.to_string()))?;
    Ok(conn)
}

/// Executes `sql` on a fresh read-only connection.
pub fn execute_sql(db_path: &Path, sql: &str, timeout_ms: u64) -> Result<ExecOutcome, ExecError> {
    let conn = open_read_only(db_path)?;
    let started = Instant::now();
    let deadline = started + Duration::from_millis(timeout_ms);
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));

    let result = run_query(&conn, sql);
    let elapsed_ms = started.elapsed().as_millis() as u64;
    conn.progress_handler(0, None::<fn() -> bool>);

    Ok(match result {
        Ok(table) => ExecOutcome {
            status: ExecStatus::Ok,
            result: Some(table),
            error_message: None,
            elapsed_ms,
        },
        Err(e) if is_interrupt(&e) && Instant::now() >= deadline => ExecOutcome {
            status: ExecStatus::Timeout,
            result: None,
            error_message: None,
            elapsed_ms,
        },
        Err(e) => ExecOutcome {
            status: ExecStatus::SqlError,
            result: None,
            error_message: Some(engine_message(&e)),
            elapsed_ms,
        },
    })
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted)
}

fn engine_message(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        rusqlite::Error::SqlInputError { msg, .. } => msg.clone(),
        other => other.to_string(),
    }
}

fn run_query(conn: &Connection, sql: &str) -> rusqlite::Result<ResultTable> {
    if sql.trim().is_empty() {
        return Err(rusqlite::Error::SqliteFailure(
            rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_MISUSE),
            Some("empty SQL statement".into()),
        ));
    }
    let mut stmt = conn.prepare(sql)?;
    let column_count = stmt.column_count();
    let mut rows = Vec::new();
    let mut cursor = stmt.raw_query();
    while let Some(row) = cursor.next()? {
        let mut cells = Vec::with_capacity(column_count);
        for i in 0..column_count {
            cells.push(Cell::from(row.get_ref(i)?));
        }
        rows.push(cells);
    }
    Ok(ResultTable { column_count, rows })
}

/// True iff an `ORDER BY` appears outside every parenthesised subquery.
/// String literals, quoted identifiers and comments are skipped.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let bytes = sql.as_bytes();
    let mut depth: i32 = 0;
    let mut i = 0;
    let mut pending_order = false;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\'' | b'"' | b'`' => {
                i = skip_quoted(bytes, i, c);
                pending_order = false;
                continue;
            }
            b'[' => {
                i = skip_quoted(bytes, i, b']');
                pending_order = false;
                continue;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
                continue;
            }
            b'(' => {
                depth += 1;
                pending_order = false;
            }
            b')' => {
                depth -= 1;
                pending_order = false;
            }
            c if c.is_ascii_alphanumeric() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &sql[start..i];
                if depth <= 0 {
                    if pending_order && word.eq_ignore_ascii_case("by") {
                        return true;
                    }
                    pending_order = word.eq_ignore_ascii_case("order");
                } else {
                    pending_order = false;
                }
                continue;
            }
            c if c.is_ascii_whitespace() => {}
            _ => pending_order = false,
        }
        i += 1;
    }
    false
}

fn skip_quoted(bytes: &[u8], open: usize, close: u8) -> usize {
    let mut i = open + 1;
    while i < bytes.len() {
        if bytes[i] == close {
            // doubled quote is an escaped quote
            if close != b']' && bytes.get(i + 1) == Some(&close) {
                i += 2;
                continue;
            }
            return i + 1;
        }
        i += 1;
    }
    bytes.len()
}

#[derive(Debug, Clone, Copy)]
enum Normalized<'a> {
    Null,
    Number(f64, Option<i64>),
    Text(&'a str),
    Blob(&'a [u8]),
}

impl<'a> Normalized<'a> {
    fn of(cell: &'a Cell) -> Self {
        match cell {
            Cell::Null => Normalized::Null,
            Cell::Integer(i) => Normalized::Number(*i as f64, Some(*i)),
            Cell::Real(f) => Normalized::Number(*f, None),
            Cell::Text(s) => Normalized::Text(s),
            Cell::Blob(b) => Normalized::Blob(b),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Normalized::Null => 0,
            Normalized::Number(..) => 1,
            Normalized::Text(_) => 2,
            Normalized::Blob(_) => 3,
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Normalized::Number(a, _), Normalized::Number(b, _)) => a.total_cmp(b),
            (Normalized::Text(a), Normalized::Text(b)) => a.cmp(b),
            (Normalized::Blob(a), Normalized::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }

    fn matches(&self, other: &Self, tolerance: f64) -> bool {
        match (self, other) {
            (Normalized::Null, Normalized::Null) => true,
            (Normalized::Number(_, Some(a)), Normalized::Number(_, Some(b))) => a == b,
            (Normalized::Number(a, _), Normalized::Number(b, _)) => {
                a == b || (a - b).abs() <= tolerance || (a.is_nan() && b.is_nan())
            }
            (Normalized::Text(a), Normalized::Text(b)) => a == b,
            (Normalized::Blob(a), Normalized::Blob(b)) => a == b,
            _ => false,
        }
    }
}

fn canonical_rows(table: &ResultTable) -> Vec<Vec<Normalized<'_>>> {
    let mut rows: Vec<Vec<Normalized<'_>>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(Normalized::of).collect())
        .collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.canonical_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    rows
}

fn ordered_rows(t: &ResultTable) -> Vec<Vec<Normalized<'_>>> {
    t.rows.iter().map(|r| r.iter().map(Normalized::of).collect()).collect()
}

pub fn compare_results(gold: &ResultTable, pred: &ResultTable, order_sensitive: bool) -> ComparisonVerdict {
    compare_results_with_tolerance(gold, pred, order_sensitive, DEFAULT_FLOAT_TOLERANCE)
}

pub fn compare_results_with_tolerance(
    gold: &ResultTable,
    pred: &ResultTable,
    order_sensitive: bool,
    tolerance: f64,
) -> ComparisonVerdict {
    if gold.column_count != pred.column_count {
        return ComparisonVerdict::differ(
            order_sensitive,
            format!("column count {} vs {}", gold.column_count, pred.column_count),
        );
    }
    if gold.rows.len() != pred.rows.len() {
        return ComparisonVerdict::differ(
            order_sensitive,
            format!("row count {} vs {}", gold.rows.len(), pred.rows.len()),
        );
    }
    let (g, p) = if order_sensitive {
        (ordered_rows(gold), ordered_rows(pred))
    } else {
        (canonical_rows(gold), canonical_rows(pred))
    };
    for (i, (gr, pr)) in g.iter().zip(&p).enumerate() {
        if !gr.iter().zip(pr).all(|(a, b)| a.matches(b, tolerance)) {
            return ComparisonVerdict::differ(order_sensitive, format!("row {i} differs"));
        }
    }
    ComparisonVerdict::equal(order_sensitive)
}

/// Verdict plus the two executions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyVerdict {
    pub verdict: ComparisonVerdict,
    pub gold: ExecOutcome,
    /// `None` when no SQL could be extracted from the model output.
    pub predicted: Option<ExecOutcome>,
}

impl AccuracyVerdict {
    pub fn correct(&self) -> bool {
        self.verdict.equal
    }
}

/// Scores a prediction against the example's gold query. `predicted_sql`
/// of `None` stands for an extraction failure.
pub fn execution_accuracy(
    example_id: &str,
    example: &BenchmarkExample,
    predicted_sql: Option<&str>,
    runner: &SqlRunner,
    tolerance: f64,
) -> Result<AccuracyVerdict, ExecError> {
    let gold = runner.execute(&example.gold_sql)?;
    let order_sensitive = has_top_level_order_by(&example.gold_sql);
    let Some(gold_table) = gold.result.as_ref().filter(|_| gold.is_ok()) else {
        return Err(ExecError::GoldFailed {
            example: example_id.to_string(),
            message: gold.failure_text().unwrap_or_default(),
        });
    };
    let Some(sql) = predicted_sql.filter(|s| !s.trim().is_empty()) else {
        return Ok(AccuracyVerdict {
            verdict: ComparisonVerdict::differ(order_sensitive, "no predicted SQL"),
            gold,
            predicted: None,
        });
    };
    let predicted = runner.execute(sql)?;
    let verdict = match (&predicted.status, &predicted.result) {
        (ExecStatus::Ok, Some(table)) => compare_results_with_tolerance(gold_table, table, order_sensitive, tolerance),
        (ExecStatus::Timeout, _) => ComparisonVerdict::differ(order_sensitive, "predicted query timed out"),
        _ => ComparisonVerdict::differ(
            order_sensitive,
            format!(
                "predicted query failed: {}",
                predicted.failure_text().unwrap_or_default()
            ),
        ),
    };
    Ok(AccuracyVerdict {
        verdict,
        gold,
        predicted: Some(predicted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: Vec<Vec<Cell>>) -> ResultTable {
        let n = rows.first().map_or(0, Vec::len);
        ResultTable::new(n, rows)
    }

    fn i(v: i64) -> Cell {
        Cell::Integer(v)
    }
    fn s(v: &str) -> Cell {
        Cell::Text(v.into())
    }

    #[test]
    fn order_by_depth_scan() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(has_top_level_order_by("select a from t order\n  by a desc"));
        assert!(!has_top_level_order_by(
            "SELECT a FROM (SELECT a FROM t ORDER BY a) LIMIT 1"
        ));
        assert!(!has_top_level_order_by("SELECT 'ORDER BY' FROM t"));
        assert!(!has_top_level_order_by("SELECT a FROM t -- ORDER BY a"));
        assert!(!has_top_level_order_by("SELECT a FROM t /* order by a */"));
        assert!(!has_top_level_order_by("SELECT \"order\" , by FROM t"));
        assert!(!has_top_level_order_by("SELECT a FROM t WHERE x = 'it''s ORDER BY'"));
        assert!(has_top_level_order_by(
            "SELECT a FROM t UNION SELECT b FROM u ORDER BY 1"
        ));
        assert!(!has_top_level_order_by("SELECT border, byline FROM t"));
        let case3 = "SELECT Affiliation\nFROM (\n    SELECT Affiliation, COUNT(*) AS count\n    FROM city_channel\n    GROUP BY Affiliation\n    ORDER BY count DESC\n) AS grouped_affiliations\nLIMIT 1;";
        assert!(!has_top_level_order_by(case3));
    }

    #[test]
    fn multiset_and_order_sensitivity() {
        let gold = t(vec![vec![i(1), s("a")], vec![i(2), s("b")]]);
        let pred = t(vec![vec![i(2), s("b")], vec![i(1), s("a")]]);
        assert!(compare_results(&gold, &pred, false).equal);
        let v = compare_results(&gold, &pred, true);
        assert!(!v.equal);
        assert_eq!(v.reason, "row 0 differs");
    }

    #[test]
    fn numeric_unification_and_tolerance() {
        assert!(compare_results(&t(vec![vec![Cell::Real(3.0)]]), &t(vec![vec![i(3)]]), false).equal);
        assert!(
            compare_results(
                &t(vec![vec![Cell::Real(1.0)]]),
                &t(vec![vec![Cell::Real(1.0 + 5e-7)]]),
                false
            )
            .equal
        );
        assert!(
            !compare_results(
                &t(vec![vec![Cell::Real(1.0)]]),
                &t(vec![vec![Cell::Real(1.0 + 5e-6)]]),
                false
            )
            .equal
        );
        assert!(!compare_results(&t(vec![vec![s("1")]]), &t(vec![vec![i(1)]]), false).equal);
        assert!(!compare_results(&t(vec![vec![Cell::Null]]), &t(vec![vec![i(0)]]), false).equal);
        assert!(compare_results(&t(vec![vec![Cell::Null]]), &t(vec![vec![Cell::Null]]), false).equal);
    }

    #[test]
    fn duplicates_and_column_count_matter() {
        let once = t(vec![vec![i(1)]]);
        let twice = t(vec![vec![i(1)], vec![i(1)]]);
        assert!(!compare_results(&once, &twice, false).equal);
        let wide = t(vec![vec![i(1), i(1)]]);
        let v = compare_results(&once, &wide, false);
        assert!(!v.equal && v.reason.starts_with("column count"));
        let empty1 = ResultTable::new(1, vec![]);
        let empty2 = ResultTable::new(2, vec![]);
        assert!(!compare_results(&empty1, &empty2, false).equal);
    }

    #[test]
    fn missing_database_is_io_error() {
        let err = execute_sql(Path::new("/nonexistent/x.sqlite"), "SELECT 1", 1000).unwrap_err();
        assert!(matches!(err, ExecError::Io { .. }));
    }
}
