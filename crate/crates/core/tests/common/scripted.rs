use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use divmerge::dataset::BenchmarkExample;
use divmerge::harness::{HarnessError, ModelFactory};
use divmerge::llm::{
    Agent, ChatBackend, CompletionRequest, CompletionResponse, LlmError, ScriptEntry, ScriptedBackend,
};
use divmerge::pipeline::Models;
use divmerge::prompts::extract_sql;

pub fn fenced(sql: &str) -> String {
    format!("```sql\n{sql}\n```")
}

/// Appends a first reply and its refinement replies. Each refinement is
/// keyed on the SQL (or raw text) that failed before it.
pub fn chain(entries: &mut Vec<ScriptEntry>, first_matcher: &str, replies: &[String]) {
    entries.push(ScriptEntry::new(first_matcher, replies[0].clone()));
    for pair in replies.windows(2) {
        let failed = extract_sql(&pair[0]).unwrap_or_else(|_| pair[0].trim().to_string());
        entries.push(ScriptEntry::new(format!("Failed SQL:\n{failed}\n"), pair[1].clone()));
    }
}

/// Scripted backend that also bumps a shared call counter.
pub struct Counting {
    inner: ScriptedBackend,
    counter: Arc<AtomicUsize>,
}

impl ChatBackend for Counting {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.counter.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn calls(&self) -> usize {
        self.inner.calls()
    }
}

/// Per-question (reasoning, coding) scripts; each example gets fresh
/// backends.
#[derive(Default)]
pub struct ScriptedFactory {
    pub scripts: BTreeMap<String, (Vec<ScriptEntry>, Vec<ScriptEntry>)>,
    pub calls: Arc<AtomicUsize>,
}

impl ScriptedFactory {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn agent(&self, id: &str, script: &[ScriptEntry]) -> Agent {
        Agent::new(
            id,
            Arc::new(Counting {
                inner: ScriptedBackend::new(script.to_vec()),
                counter: self.calls.clone(),
            }),
        )
    }
}

impl ModelFactory for ScriptedFactory {
    fn models_for(&self, _: &str, example: &BenchmarkExample) -> Result<Models, HarnessError> {
        let (r, c) = self
            .scripts
            .get(&example.question)
            .ok_or_else(|| HarnessError::Config(format!("no script for `{}`", example.question)))?;
        Ok(Models {
            reasoning: self.agent("scripted-reasoning", r),
            coding: self.agent("scripted-coding", c),
        })
    }
}

pub fn write_examples(path: &Path, examples: &[BenchmarkExample]) {
    let records: Vec<_> = examples
        .iter()
        .map(|e| serde_json::json!({"db_id": e.db_id, "question": e.question, "query": e.gold_sql}))
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&records).unwrap()).unwrap();
}
