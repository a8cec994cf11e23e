//! Stage prompt templates, few-shot examples and model-output parsing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing binding for required placeholder `{0}`")]
    MissingBinding(String),
    #[error("template `{stage}` lacks required placeholder `{placeholder}`")]
    MissingPlaceholder { stage: String, placeholder: String },
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no SQL found in model output")]
    NoSql,
}

/// Every placeholder name the renderer recognises.
pub const PLACEHOLDERS: [&str; 8] = [
    "question",
    "schema",
    "subquestion",
    "subqueries",
    "sql",
    "error",
    "examples",
    "plan",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TableSelection,
    Decomposition,
    SubqueryGeneration,
    Refinement,
    MergePlanner,
    MergeExecutor,
    ColumnSelection,
    Baseline,
    RouteJudge,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::TableSelection,
        Stage::Decomposition,
        Stage::SubqueryGeneration,
        Stage::Refinement,
        Stage::MergePlanner,
        Stage::MergeExecutor,
        Stage::ColumnSelection,
        Stage::Baseline,
        Stage::RouteJudge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::TableSelection => "table_selection",
            Stage::Decomposition => "decomposition",
            Stage::SubqueryGeneration => "subquery_generation",
            Stage::Refinement => "refinement",
            Stage::MergePlanner => "merge_planner",
            Stage::MergeExecutor => "merge_executor",
            Stage::ColumnSelection => "column_selection",
            Stage::Baseline => "baseline",
            Stage::RouteJudge => "route_judge",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::TableSelection | Stage::Decomposition | Stage::RouteJudge => &["question", "schema"],
            Stage::SubqueryGeneration => &["subquestion", "schema", "examples"],
            Stage::Refinement => &["question", "sql", "error"],
            Stage::MergePlanner => &["question", "subqueries"],
            Stage::MergeExecutor => &["question", "schema", "subqueries", "plan"],
            Stage::ColumnSelection => &["question", "schema", "sql"],
            Stage::Baseline => &["question", "schema", "examples"],
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            Stage::TableSelection => include_str!("../prompts/table_selection.txt"),
            Stage::Decomposition => include_str!("../prompts/decomposition.txt"),
            Stage::SubqueryGeneration => include_str!("../prompts/subquery_generation.txt"),
            Stage::Refinement => include_str!("../prompts/refinement.txt"),
            Stage::MergePlanner => include_str!("../prompts/merge_planner.txt"),
            Stage::MergeExecutor => include_str!("../prompts/merge_executor.txt"),
            Stage::ColumnSelection => include_str!("../prompts/column_selection.txt"),
            Stage::Baseline => include_str!("../prompts/baseline.txt"),
            Stage::RouteJudge => include_str!("../prompts/route_judge.txt"),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub stage_label: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(
        stage_label: impl Into<String>,
        body: impl Into<String>,
        required: &[&str],
    ) -> Result<Self, PromptError> {
        let template = PromptTemplate {
            stage_label: stage_label.into(),
            body: body.into(),
            required_placeholders: required.iter().map(|s| s.to_string()).collect(),
        };
        for p in &template.required_placeholders {
            if !template.body.contains(&format!("{{{p}}}")) {
                return Err(PromptError::MissingPlaceholder {
                    stage: template.stage_label.clone(),
                    placeholder: p.clone(),
                });
            }
        }
        Ok(template)
    }

    pub fn for_stage(stage: Stage, body: impl Into<String>) -> Result<Self, PromptError> {
        PromptTemplate::new(stage.label(), body, stage.required_placeholders())
    }
}

/// Substitutes known `{placeholder}`s in a single pass; bound values are
/// never rescanned. Unknown brace groups are left untouched and unbound
/// optional placeholders render empty.
pub fn render(template: &PromptTemplate, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    if let Some(missing) = template
        .required_placeholders
        .iter()
        .find(|p| !bindings.contains_key(p.as_str()))
    {
        return Err(PromptError::MissingBinding(missing.clone()));
    }
    let body = template.body.as_str();
    let mut out = String::with_capacity(body.len() + 256);
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name = after.find('}').map(|close| &after[..close]);
        match name.filter(|n| PLACEHOLDERS.contains(n)) {
            Some(n) => {
                if let Some(value) = bindings.get(n) {
                    out.push_str(value);
                }
                rest = &after[n.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub sql: String,
}

pub fn format_fewshot(examples: &[FewShotExample]) -> String {
    examples
        .iter()
        .map(|e| format!("Question: {}\nSQL: {}", e.question, e.sql))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// All stage templates and the few-shot set used for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<Stage, PromptTemplate>,
    pub fewshot: Vec<FewShotExample>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = Stage::ALL
            .iter()
            .map(|&s| {
                (
                    s,
                    PromptTemplate::for_stage(s, s.default_body()).expect("shipped template is valid"),
                )
            })
            .collect();
        let fewshot =
            serde_json::from_str(include_str!("../prompts/fewshot.json")).expect("shipped few-shot set parses");
        PromptSet { templates, fewshot }
    }
}

impl PromptSet {
    /// Loads `<dir>/<stage_label>.txt` for every stage present in `dir`;
    /// stages without a file keep the shipped template.
    pub fn load(dir: Option<&Path>, fewshot_file: Option<&Path>) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        if let Some(dir) = dir {
            for stage in Stage::ALL {
                let path = dir.join(format!("{}.txt", stage.label()));
                if path.is_file() {
                    let body = read(&path)?;
                    set.templates.insert(stage, PromptTemplate::for_stage(stage, body)?);
                }
            }
        }
        if let Some(path) = fewshot_file {
            let text = read(path)?;
            let fewshot: Vec<FewShotExample> = serde_json::from_str(&text).map_err(|e| PromptError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if fewshot
                .iter()
                .any(|e| e.question.trim().is_empty() || e.sql.trim().is_empty())
            {
                return Err(PromptError::Io {
                    path: path.to_path_buf(),
                    message: "few-shot examples need a non-empty question and sql".into(),
                });
            }
            set.fewshot = fewshot;
        }
        Ok(set)
    }

    pub fn template(&self, stage: Stage) -> &PromptTemplate {
        &self.templates[&stage]
    }

    pub fn set_template(&mut self, stage: Stage, body: impl Into<String>) -> Result<(), PromptError> {
        self.templates.insert(stage, PromptTemplate::for_stage(stage, body)?);
        Ok(())
    }

    pub fn render(&self, stage: Stage, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        render(self.template(stage), bindings)
    }

    pub fn fewshot_text(&self) -> String {
        format_fewshot(&self.fewshot)
    }

    /// SHA-256 over every template body and the few-shot set, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (stage, t) in &self.templates {
            hasher.update(stage.label().as_bytes());
            hasher.update([0]);
            hasher.update(t.body.as_bytes());
            hasher.update([0]);
        }
        hasher.update(serde_json::to_vec(&self.fewshot).unwrap_or_default());
        hex::encode(hasher.finalize())
    }
}

fn read(path: &Path) -> Result<String, PromptError> {
    fs::read_to_string(path).map_err(|e| PromptError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Strips a list marker (`1.`, `2)`, `- `, `* `, `Sub-question 3:`,
/// `Step 2:`) and returns the remaining text.
fn strip_list_marker(line: &str) -> Option<&str> {
    let t = line.trim();
    for bullet in ["- ", "* ", "\u{2022} "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    if matches!(t, "-" | "*" | "\u{2022}") {
        return Some("");
    }
    let t = t.trim_start_matches(['*', '#']).trim_start();
    let lowered = t.to_ascii_lowercase();
    let mut rest = t;
    let mut labelled = false;
    for word in ["sub-question", "subquestion", "sub question", "step", "question"] {
        if lowered.starts_with(word) {
            rest = t[word.len()..].trim_start();
            labelled = true;
            break;
        }
    }
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let after = rest[digits..].trim_start_matches('*');
    let mut chars = after.chars();
    match chars.next() {
        Some('.' | ')' | ':') => {
            let item = chars.as_str().trim_start_matches('*');
            (item.is_empty() || item.starts_with(char::is_whitespace)).then_some(item)
        }
        None if labelled => Some(""),
        _ => None,
    }
}

/// Parses a decomposition reply into ordered sub-questions.
pub fn parse_subquestions(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    let mut in_item = false;
    for line in text.lines() {
        if let Some(item) = strip_list_marker(line) {
            items.push(item.trim().to_string());
            in_item = true;
            continue;
        }
        let continuation = line.starts_with([' ', '\t']) && !line.trim().is_empty();
        if in_item && continuation {
            let last = items.last_mut().expect("in_item implies an item");
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line.trim());
        } else {
            in_item = false;
        }
    }
    items.retain(|s| !s.is_empty());
    if items.is_empty() {
        let whole = text.trim();
        if whole.is_empty() {
            return Vec::new();
        }
        return vec![whole.to_string()];
    }
    items
}

fn find_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // language tag runs to end of line
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

fn is_word_at(text: &str, at: usize, len: usize) -> bool {
    let bytes = text.as_bytes();
    let before_ok = at == 0 || !(bytes[at - 1].is_ascii_alphanumeric() || bytes[at - 1] == b'_');
    let after_ok = bytes
        .get(at + len)
        .is_none_or(|b| !(b.is_ascii_alphanumeric() || *b == b'_'));
    before_ok && after_ok
}

fn first_keyword(text: &str) -> Option<usize> {
    let lowered = text.to_ascii_lowercase();
    ["select", "with"]
        .iter()
        .filter_map(|kw| {
            lowered
                .match_indices(kw)
                .map(|(i, _)| i)
                .find(|&i| is_word_at(&lowered, i, kw.len()))
        })
        .min()
}

/// Byte offset just past the first `;` outside quotes, if any.
fn statement_end(sql: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in sql.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '\'' | '"' | '`') => quote = Some(c),
            (None, ';') => return Some(i + 1),
            _ => {}
        }
    }
    None
}

/// Isolates the SQL statement in a model reply.
pub fn extract_sql(text: &str) -> Result<String, PromptError> {
    if let Some(body) = find_fence(text) {
        let sql = body.trim();
        return if sql.is_empty() {
            Err(PromptError::NoSql)
        } else {
            Ok(sql.to_string())
        };
    }
    let start = first_keyword(text).ok_or(PromptError::NoSql)?;
    let candidate = &text[start..];
    let end = statement_end(candidate).unwrap_or(candidate.len());
    let sql = candidate[..end].trim();
    if sql.is_empty() {
        Err(PromptError::NoSql)
    } else {
        Ok(sql.to_string())
    }
}

/// Parses a comma- or newline-separated table list from a table-selection
/// reply.
pub fn parse_table_list(text: &str) -> Vec<String> {
    let cleaned = match find_fence(text) {
        Some(body) => body,
        None => text,
    };
    cleaned
        .split([',', '\n'])
        .map(|part| {
            let part = strip_list_marker(part).unwrap_or(part);
            part.trim()
                .trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*' | '[' | ']' | '.'))
                .trim()
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}
