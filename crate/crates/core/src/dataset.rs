//! Spider-format schema and example ingestion, schema reduction and
//! schema-level features.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("example record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("schema `{db_id}` failed integrity check: {message}")]
    Integrity { db_id: String, message: String },
    #[error("none of the requested tables exist in schema `{db_id}`")]
    EmptyReduction { db_id: String },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Coarse column type as distributed in Spider's `column_types`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
    Others,
}

impl ColumnType {
    fn parse(raw: &str) -> Self {
        match raw.to_ascii_lowercase().as_str() {
            "text" => ColumnType::Text,
            "number" => ColumnType::Number,
            "time" => ColumnType::Time,
            "boolean" => ColumnType::Boolean,
            _ => ColumnType::Others,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: ColumnType,
    pub table_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    /// Indices into `columns`.
    pub primary_key_columns: Vec<usize>,
}

/// `(from_table, from_column, to_table, to_column)`; column indices are local
/// to their table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: usize,
    pub from_column: usize,
    pub to_table: usize,
    pub to_column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKey>,
    pub db_file_path: PathBuf,
}

impl DatabaseSchema {
    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.tables.iter().position(|t| t.name.to_lowercase() == needle)
    }

    /// Checks every structural invariant of a loaded schema.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| DatasetError::Integrity {
            db_id: self.db_id.clone(),
            message,
        };
        if self.tables.is_empty() {
            return Err(fail("schema has no tables".into()));
        }
        let mut seen = HashSet::new();
        for (ti, table) in self.tables.iter().enumerate() {
            if table.name.is_empty() {
                return Err(fail(format!("table {ti} has an empty name")));
            }
            if !seen.insert(table.name.to_lowercase()) {
                return Err(fail(format!("duplicate table name `{}`", table.name)));
            }
            for column in &table.columns {
                if column.name.is_empty() {
                    return Err(fail(format!("table `{}` has an unnamed column", table.name)));
                }
                if column.table_index != ti {
                    return Err(fail(format!(
                        "column `{}` claims table {} but lives in table {ti}",
                        column.name, column.table_index
                    )));
                }
            }
            if let Some(&bad) = table.primary_key_columns.iter().find(|&&c| c >= table.columns.len()) {
                return Err(fail(format!(
                    "table `{}` primary key column {bad} out of range",
                    table.name
                )));
            }
        }
        for fk in &self.foreign_keys {
            let ok = |t: usize, c: usize| self.tables.get(t).is_some_and(|tb| c < tb.columns.len());
            if !ok(fk.from_table, fk.from_column) || !ok(fk.to_table, fk.to_column) {
                return Err(fail(format!("dangling foreign key {fk:?}")));
            }
        }
        Ok(())
    }
}

/// A schema restricted to the tables judged relevant to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedSchema {
    pub source_db_id: String,
    pub kept_table_names: Vec<String>,
    pub view: DatabaseSchema,
}

impl ReducedSchema {
    /// The trivial reduction that keeps every table.
    pub fn full(schema: &DatabaseSchema) -> Self {
        ReducedSchema {
            source_db_id: schema.db_id.clone(),
            kept_table_names: schema.tables.iter().map(|t| t.name.clone()).collect(),
            view: schema.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkExample {
    pub question: String,
    pub gold_sql: String,
    pub db_id: String,
}

/// Schema- and question-level signals consumed by the routers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub table_count: u32,
    pub column_count: u32,
    pub foreign_key_count: u32,
    pub question_token_count: u32,
    pub question_has_aggregation_keyword: u8,
    pub question_has_superlative_keyword: u8,
}

impl FeatureVector {
    pub const LEN: usize = 6;
    pub const NAMES: [&'static str; Self::LEN] = [
        "table_count",
        "column_count",
        "foreign_key_count",
        "question_token_count",
        "question_has_aggregation_keyword",
        "question_has_superlative_keyword",
    ];

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [
            self.table_count as f64,
            self.column_count as f64,
            self.foreign_key_count as f64,
            self.question_token_count as f64,
            self.question_has_aggregation_keyword as f64,
            self.question_has_superlative_keyword as f64,
        ]
    }
}

pub const AGGREGATION_KEYWORDS: &[&str] = &["average", "count", "sum", "total", "number of"];
pub const SUPERLATIVE_KEYWORDS: &[&str] = &["most", "least", "highest", "lowest", "maximum", "minimum"];

#[derive(Deserialize)]
#[serde(untagged)]
enum PrimaryKeyEntry {
    Single(i64),
    Composite(Vec<i64>),
}

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<PrimaryKeyEntry>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(text: &str, err: serde_json::Error) -> DatasetError {
    let (line, column) = (err.line(), err.column());
    let offset = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    DatasetError::Parse {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

/// Default on-disk location of a Spider database: `<root>/database/<db_id>/<db_id>.sqlite`.
pub fn database_path(root: &Path, db_id: &str) -> PathBuf {
    root.join("database").join(db_id).join(format!("{db_id}.sqlite"))
}

/// Loads a Spider `tables.json`. Database file paths are resolved against
/// `database_root` using the standard Spider layout.
pub fn load_schemas(path: &Path, database_root: &Path) -> Result<BTreeMap<String, DatabaseSchema>> {
    let text = read(path)?;
    parse_schemas(&text, database_root)
}

pub fn parse_schemas(text: &str, database_root: &Path) -> Result<BTreeMap<String, DatabaseSchema>> {
    let raw: Vec<RawSchema> = serde_json::from_str(text).map_err(|e| parse_error(text, e))?;
    let mut out = BTreeMap::new();
    for record in raw {
        let schema = convert_schema(record, database_root)?;
        if out.contains_key(&schema.db_id) {
            return Err(DatasetError::Integrity {
                db_id: schema.db_id,
                message: "duplicate db_id".into(),
            });
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

fn convert_schema(raw: RawSchema, database_root: &Path) -> Result<DatabaseSchema> {
    let db_id = raw.db_id;
    let fail = |message: String| DatasetError::Integrity {
        db_id: db_id.clone(),
        message,
    };
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err(fail(format!(
            "{} column names but {} column types",
            raw.column_names_original.len(),
            raw.column_types.len()
        )));
    }

    let mut tables: Vec<TableDef> = raw
        .table_names_original
        .iter()
        .map(|name| TableDef {
            name: name.clone(),
            columns: Vec::new(),
            primary_key_columns: Vec::new(),
        })
        .collect();

    // Global Spider column index -> (table, local column).
    let mut global: Vec<Option<(usize, usize)>> = Vec::with_capacity(raw.column_names_original.len());
    for ((table, name), ty) in raw.column_names_original.iter().zip(&raw.column_types) {
        if *table < 0 {
            global.push(None);
            continue;
        }
        let ti = *table as usize;
        let Some(t) = tables.get_mut(ti) else {
            return Err(fail(format!("column `{name}` references missing table {table}")));
        };
        global.push(Some((ti, t.columns.len())));
        t.columns.push(ColumnDef {
            name: name.clone(),
            declared_type: ColumnType::parse(ty),
            table_index: ti,
        });
    }

    let resolve = |index: i64| -> Result<(usize, usize)> {
        usize::try_from(index)
            .ok()
            .and_then(|i| global.get(i).copied().flatten())
            .ok_or_else(|| fail(format!("column index {index} out of range")))
    };

    for entry in &raw.primary_keys {
        let indices = match entry {
            PrimaryKeyEntry::Single(i) => vec![*i],
            PrimaryKeyEntry::Composite(v) => v.clone(),
        };
        for index in indices {
            let (ti, ci) = resolve(index)?;
            tables[ti].primary_key_columns.push(ci);
        }
    }

    let mut foreign_keys = Vec::with_capacity(raw.foreign_keys.len());
    for (from, to) in &raw.foreign_keys {
        let (from_table, from_column) = resolve(*from)?;
        let (to_table, to_column) = resolve(*to)?;
        foreign_keys.push(ForeignKey {
            from_table,
            from_column,
            to_table,
            to_column,
        });
    }

    let schema = DatabaseSchema {
        db_file_path: database_path(database_root, &db_id),
        db_id: db_id.clone(),
        tables,
        foreign_keys,
    };
    schema.validate()?;
    Ok(schema)
}

/// Loads a Spider `dev.json`/`test.json` example file.
pub fn load_examples(path: &Path) -> Result<Vec<BenchmarkExample>> {
    let text = read(path)?;
    parse_examples(&text)
}

pub fn parse_examples(text: &str) -> Result<Vec<BenchmarkExample>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| parse_error(text, e))?;
    raw.iter()
        .enumerate()
        .map(|(index, record)| {
            let field = |name: &str| -> Result<String> {
                match record.get(name).and_then(|v| v.as_str()) {
                    Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
                    Some(_) => Err(DatasetError::Record {
                        index,
                        message: format!("field `{name}` is empty"),
                    }),
                    None => Err(DatasetError::Record {
                        index,
                        message: format!("missing string field `{name}`"),
                    }),
                }
            };
            Ok(BenchmarkExample {
                question: field("question")?,
                gold_sql: field("query")?,
                db_id: field("db_id")?,
            })
        })
        .collect()
}

/// Restricts `schema` to the tables named in `keep` (case-insensitive).
/// Unknown names are ignored; source table order is preserved.
pub fn reduce_schema<S: AsRef<str>>(schema: &DatabaseSchema, keep: &[S]) -> Result<ReducedSchema> {
    let wanted: HashSet<String> = keep.iter().map(|n| n.as_ref().trim().to_lowercase()).collect();
    let kept: Vec<usize> = (0..schema.tables.len())
        .filter(|&i| wanted.contains(&schema.tables[i].name.to_lowercase()))
        .collect();
    if kept.is_empty() {
        return Err(DatasetError::EmptyReduction {
            db_id: schema.db_id.clone(),
        });
    }

    let mut remap = vec![None; schema.tables.len()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = Some(new);
    }
    let tables = kept
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            let mut table = schema.tables[old].clone();
            for column in &mut table.columns {
                column.table_index = new;
            }
            table
        })
        .collect::<Vec<_>>();
    let foreign_keys = schema
        .foreign_keys
        .iter()
        .filter_map(|fk| {
            Some(ForeignKey {
                from_table: remap[fk.from_table]?,
                to_table: remap[fk.to_table]?,
                ..*fk
            })
        })
        .collect();

    Ok(ReducedSchema {
        source_db_id: schema.db_id.clone(),
        kept_table_names: tables.iter().map(|t| t.name.clone()).collect(),
        view: DatabaseSchema {
            db_id: schema.db_id.clone(),
            tables,
            foreign_keys,
            db_file_path: schema.db_file_path.clone(),
        },
    })
}

/// Renders a schema as prompt context: `Table (col, ...)` lines followed by
/// an optional `Foreign keys:` block.
pub fn serialize_schema(schema: &DatabaseSchema) -> String {
    let mut out = String::new();
    for table in &schema.tables {
        let columns: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "{} ({})", table.name, columns.join(", "));
    }
    if !schema.foreign_keys.is_empty() {
        out.push_str("Foreign keys:\n");
        for fk in &schema.foreign_keys {
            let from = &schema.tables[fk.from_table];
            let to = &schema.tables[fk.to_table];
            let _ = writeln!(
                out,
                "{}.{} = {}.{}",
                from.name, from.columns[fk.from_column].name, to.name, to.columns[fk.to_column].name
            );
        }
    }
    out.truncate(out.trim_end().len());
    out
}

fn contains_keyword(lowered: &str, keyword: &str) -> bool {
    if keyword.contains(' ') {
        let tokens: Vec<&str> = word_tokens(lowered).collect();
        let phrase: Vec<&str> = keyword.split(' ').collect();
        tokens.windows(phrase.len()).any(|w| w == phrase.as_slice())
    } else {
        word_tokens(lowered).any(|w| w == keyword)
    }
}

fn word_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
}

pub fn extract_features(question: &str, schema: &DatabaseSchema) -> FeatureVector {
    let lowered = question.to_lowercase();
    let flag = |words: &[&str]| u8::from(words.iter().any(|k| contains_keyword(&lowered, k)));
    FeatureVector {
        table_count: schema.table_count() as u32,
        column_count: schema.column_count() as u32,
        foreign_key_count: schema.foreign_keys.len() as u32,
        question_token_count: question.split_whitespace().count() as u32,
        question_has_aggregation_keyword: flag(AGGREGATION_KEYWORDS),
        question_has_superlative_keyword: flag(SUPERLATIVE_KEYWORDS),
    }
}
