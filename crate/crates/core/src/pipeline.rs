//! The divide-and-merge pipeline and the one-step baseline parser.
//!
//! Stage order: table selection, decomposition, per-sub-question SQL
//! generation with bounded execute-and-refine, merge (last sub-query or
//! planner/executor), then optional column selection. Every model call is
//! recorded in the run's [`PipelineTrace`].

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{reduce_schema, serialize_schema, BenchmarkExample, DatabaseSchema, ReducedSchema};
use crate::executor::{ExecError, SqlRunner};
use crate::llm::{Agent, LlmError, Transcript};
use crate::prompts::{extract_sql, parse_subquestions, parse_table_list, PromptError, PromptSet, Stage};

/// Hard cap on refinement rounds regardless of configuration.
pub const MAX_REFINEMENTS_CAP: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("nothing to merge")]
    NoSubqueries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    LastSubquery,
    PlannerExecutor,
}

impl MergeStrategy {
    pub fn display_name(self) -> &'static str {
        match self {
            MergeStrategy::LastSubquery => "Last Sub-query",
            MergeStrategy::PlannerExecutor => "Planner&Executor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_merge")]
    pub merge_strategy: MergeStrategy,
    #[serde(default = "default_true", rename = "column_selection")]
    pub column_selection_enabled: bool,
    #[serde(default = "default_refinements")]
    pub max_refinements: u32,
    #[serde(default)]
    pub parallel_subqueries: bool,
    #[serde(default = "default_fanout")]
    pub subquery_fanout_width: usize,
}

fn default_merge() -> MergeStrategy {
    MergeStrategy::PlannerExecutor
}
fn default_true() -> bool {
    true
}
fn default_refinements() -> u32 {
    3
}
fn default_fanout() -> usize {
    4
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            merge_strategy: default_merge(),
            column_selection_enabled: true,
            max_refinements: default_refinements(),
            parallel_subqueries: false,
            subquery_fanout_width: default_fanout(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_refinements > MAX_REFINEMENTS_CAP {
            return Err(PipelineError::Config(format!(
                "max_refinements {} exceeds cap {MAX_REFINEMENTS_CAP}",
                self.max_refinements
            )));
        }
        if self.subquery_fanout_width == 0 {
            return Err(PipelineError::Config("subquery_fanout_width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub for_index: usize,
    pub sql: String,
    pub refinement_attempts: u32,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Module,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Module => "module",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub example_id: String,
    pub arm: Arm,
    pub reduced_schema: ReducedSchema,
    pub subquestions: Vec<SubQuestion>,
    pub subqueries: Vec<SubQuery>,
    pub merge_plan_text: String,
    pub merged_sql: String,
    pub final_sql: String,
    pub transcript: Transcript,
    pub stage_timings_ms: BTreeMap<String, u64>,
    /// Fallbacks taken along the way, in order.
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub merge_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PipelineTrace {
    fn empty(example_id: &str, arm: Arm, schema: &DatabaseSchema) -> Self {
        PipelineTrace {
            example_id: example_id.to_string(),
            arm,
            reduced_schema: ReducedSchema::full(schema),
            subquestions: Vec::new(),
            subqueries: Vec::new(),
            merge_plan_text: String::new(),
            merged_sql: String::new(),
            final_sql: String::new(),
            transcript: Vec::new(),
            stage_timings_ms: BTreeMap::new(),
            notes: Vec::new(),
            merge_fallback: false,
            error: None,
        }
    }

    fn fail(&mut self, err: PipelineError) {
        self.final_sql.clear();
        self.error = Some(err.to_string());
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        t.stage_timings_ms.clear();
        for entry in &mut t.transcript {
            entry.response.latency_ms = 0;
        }
        t
    }

    /// Pretty JSON of [`Self::without_timings`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(&self.without_timings()).expect("trace serializes")
    }
}

/// The two logical endpoints: reasoning (selection, decomposition,
/// planning, column selection, judging) and coding (generation, plan
/// execution, baseline).
#[derive(Debug, Clone)]
pub struct Models {
    pub reasoning: Agent,
    pub coding: Agent,
}

/// Shared read-only inputs to every stage of one run.
#[derive(Debug, Clone, Copy)]
pub struct StageEnv<'a> {
    pub prompts: &'a PromptSet,
    pub runner: &'a SqlRunner,
}

/// Result of one execute-and-refine loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedSql {
    /// Last SQL extracted from the model; empty when nothing was ever extracted.
    pub sql: String,
    pub refinement_attempts: u32,
    pub valid: bool,
}

/// Sends `first_prompt`, executes the extracted SQL, and on an execution or
/// extraction error re-prompts the same model with the failed SQL and the
/// verbatim error, at most `max_refinements` times.
#[allow(clippy::too_many_arguments)]
pub fn execute_and_refine(
    agent: &Agent,
    env: StageEnv<'_>,
    stage: Stage,
    first_prompt: String,
    question: &str,
    schema_text: &str,
    max_refinements: u32,
    transcript: &mut Transcript,
) -> Result<RefinedSql, PipelineError> {
    let max_refinements = max_refinements.min(MAX_REFINEMENTS_CAP);
    let refine_label = format!("{}:refinement", stage.label());
    let mut reply = agent.ask(stage.label(), 0, first_prompt, transcript)?;
    let mut last_sql = String::new();
    let mut attempt = 0;
    loop {
        let (failed_sql, error) = match extract_sql(&reply) {
            Ok(sql) => {
                let outcome = env.runner.execute(&sql)?;
                if outcome.is_ok() {
                    return Ok(RefinedSql {
                        sql,
                        refinement_attempts: attempt,
                        valid: true,
                    });
                }
                last_sql = sql.clone();
                (sql, outcome.failure_text().unwrap_or_default())
            }
            Err(e) => (reply.trim().to_string(), e.to_string()),
        };
        if attempt >= max_refinements {
            return Ok(RefinedSql {
                sql: last_sql,
                refinement_attempts: attempt,
                valid: false,
            });
        }
        attempt += 1;
        let bindings = BTreeMap::from([
            ("question", question.to_string()),
            ("schema", schema_text.to_string()),
            ("sql", failed_sql),
            ("error", error),
        ]);
        let prompt = env.prompts.render(Stage::Refinement, &bindings)?;
        reply = agent.ask(&refine_label, attempt, prompt, transcript)?;
    }
}

/// Narrows the schema to the tables the reasoning model asks for; falls
/// back to the full schema when none of them exist.
pub fn select_tables(
    question: &str,
    schema: &DatabaseSchema,
    reasoning: &Agent,
    env: StageEnv<'_>,
    transcript: &mut Transcript,
) -> Result<(ReducedSchema, Option<String>), PipelineError> {
    let bindings = BTreeMap::from([("question", question.to_string()), ("schema", serialize_schema(schema))]);
    let prompt = env.prompts.render(Stage::TableSelection, &bindings)?;
    let reply = reasoning.ask(Stage::TableSelection.label(), 0, prompt, transcript)?;
    let names = parse_table_list(&reply);
    Ok(match reduce_schema(schema, &names) {
        Ok(reduced) => (reduced, None),
        Err(e) => (
            ReducedSchema::full(schema),
            Some(format!("table selection fell back to full schema: {e}")),
        ),
    })
}

pub fn decompose(
    question: &str,
    reduced: &ReducedSchema,
    reasoning: &Agent,
    env: StageEnv<'_>,
    transcript: &mut Transcript,
) -> Result<Vec<SubQuestion>, PipelineError> {
    let bindings = BTreeMap::from([
        ("question", question.to_string()),
        ("schema", serialize_schema(&reduced.view)),
    ]);
    let prompt = env.prompts.render(Stage::Decomposition, &bindings)?;
    let reply = reasoning.ask(Stage::Decomposition.label(), 0, prompt, transcript)?;
    let mut items = parse_subquestions(&reply);
    if items.is_empty() {
        items.push(question.trim().to_string());
    }
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(i, text)| SubQuestion { index: i + 1, text })
        .collect())
}

/// Context block listing earlier sub-questions, with their SQL when known.
fn prior_context(prior: &[SubQuestion], solved: &[SubQuery]) -> String {
    if prior.is_empty() {
        return "(none)".into();
    }
    prior
        .iter()
        .map(|q| match solved.iter().find(|s| s.for_index == q.index) {
            Some(s) => format!("{}. {}\nSQL: {}", q.index, q.text, s.sql),
            None => format!("{}. {}", q.index, q.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[allow(clippy::too_many_arguments)]
pub fn generate_subquery(
    question: &str,
    subquestion: &SubQuestion,
    prior_context_text: &str,
    reduced: &ReducedSchema,
    coding: &Agent,
    env: StageEnv<'_>,
    max_refinements: u32,
    transcript: &mut Transcript,
) -> Result<SubQuery, PipelineError> {
    let schema_text = serialize_schema(&reduced.view);
    let bindings = BTreeMap::from([
        ("question", question.to_string()),
        ("schema", schema_text.clone()),
        ("examples", env.prompts.fewshot_text()),
        ("subqueries", prior_context_text.to_string()),
        ("subquestion", subquestion.text.clone()),
    ]);
    let prompt = env.prompts.render(Stage::SubqueryGeneration, &bindings)?;
    let refined = execute_and_refine(
        coding,
        env,
        Stage::SubqueryGeneration,
        prompt,
        &subquestion.text,
        &schema_text,
        max_refinements,
        transcript,
    )?;
    Ok(SubQuery {
        for_index: subquestion.index,
        sql: refined.sql,
        refinement_attempts: refined.refinement_attempts,
        valid: refined.valid,
    })
}

/// Generates one sub-query per sub-question. Serial mode feeds each prompt
/// the SQL of earlier sub-questions; parallel mode can only list the
/// earlier sub-questions themselves. Output order is always by index.
#[allow(clippy::too_many_arguments)]
pub fn generate_subqueries(
    question: &str,
    subquestions: &[SubQuestion],
    reduced: &ReducedSchema,
    coding: &Agent,
    env: StageEnv<'_>,
    config: &PipelineConfig,
    transcript: &mut Transcript,
) -> Result<Vec<SubQuery>, PipelineError> {
    if !config.parallel_subqueries || subquestions.len() <= 1 {
        let mut out: Vec<SubQuery> = Vec::with_capacity(subquestions.len());
        for (j, sq) in subquestions.iter().enumerate() {
            let context = prior_context(&subquestions[..j], &out);
            out.push(generate_subquery(
                question,
                sq,
                &context,
                reduced,
                coding,
                env,
                config.max_refinements,
                transcript,
            )?);
        }
        return Ok(out);
    }

    type Slot = Mutex<Option<Result<(SubQuery, Transcript), PipelineError>>>;
    let slots: Vec<Slot> = subquestions.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let width = config.subquery_fanout_width.min(subquestions.len());
    std::thread::scope(|scope| {
        for _ in 0..width {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= subquestions.len() {
                    break;
                }
                let context = prior_context(&subquestions[..j], &[]);
                let mut local = Transcript::new();
                let result = generate_subquery(
                    question,
                    &subquestions[j],
                    &context,
                    reduced,
                    coding,
                    env,
                    config.max_refinements,
                    &mut local,
                )
                .map(|sq| (sq, local));
                *slots[j].lock().unwrap() = Some(result);
            });
        }
    });
    let mut out = Vec::with_capacity(subquestions.len());
    for slot in slots {
        let (sq, local) = slot.into_inner().unwrap().expect("every slot is filled")?;
        transcript.extend(local);
        out.push(sq);
    }
    Ok(out)
}

pub fn merge_last(subqueries: &[SubQuery]) -> Result<String, PipelineError> {
    subqueries
        .last()
        .map(|s| s.sql.clone())
        .ok_or(PipelineError::NoSubqueries)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeOutcome {
    pub plan_text: String,
    pub sql: String,
    /// True when the executor never produced runnable SQL and the last
    /// sub-query was used instead.
    pub fallback: bool,
}

fn numbered_pairs(subquestions: &[SubQuestion], subqueries: &[SubQuery]) -> String {
    subquestions
        .iter()
        .zip(subqueries)
        .map(|(q, s)| {
            format!(
                "Sub-question {}: {}\nSub-query {}: {}",
                q.index, q.text, s.for_index, s.sql
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Planner & executor merge: the reasoning model writes a plan, the coding
/// model turns it into one SQL statement.
#[allow(clippy::too_many_arguments)]
pub fn merge_plan_execute(
    question: &str,
    subquestions: &[SubQuestion],
    subqueries: &[SubQuery],
    models: &Models,
    reduced: &ReducedSchema,
    env: StageEnv<'_>,
    max_refinements: u32,
    transcript: &mut Transcript,
) -> Result<MergeOutcome, PipelineError> {
    if subqueries.is_empty() {
        return Err(PipelineError::NoSubqueries);
    }
    let pairs = numbered_pairs(subquestions, subqueries);
    let plan_bindings = BTreeMap::from([("question", question.to_string()), ("subqueries", pairs.clone())]);
    let plan_prompt = env.prompts.render(Stage::MergePlanner, &plan_bindings)?;
    let plan_text = models
        .reasoning
        .ask(Stage::MergePlanner.label(), 0, plan_prompt, transcript)?;

    let schema_text = serialize_schema(&reduced.view);
    let exec_bindings = BTreeMap::from([
        ("question", question.to_string()),
        ("schema", schema_text.clone()),
        ("subqueries", pairs),
        ("plan", plan_text.clone()),
    ]);
    let exec_prompt = env.prompts.render(Stage::MergeExecutor, &exec_bindings)?;
    let refined = execute_and_refine(
        &models.coding,
        env,
        Stage::MergeExecutor,
        exec_prompt,
        question,
        &schema_text,
        max_refinements,
        transcript,
    )?;
    if refined.valid {
        Ok(MergeOutcome {
            plan_text,
            sql: refined.sql,
            fallback: false,
        })
    } else {
        Ok(MergeOutcome {
            plan_text,
            sql: merge_last(subqueries)?,
            fallback: true,
        })
    }
}

/// Adjusts the SELECT list of `merged_sql` to the question. Returns the
/// input unchanged when the revision never executes.
pub fn column_select(
    question: &str,
    reduced: &ReducedSchema,
    merged_sql: &str,
    reasoning: &Agent,
    env: StageEnv<'_>,
    max_refinements: u32,
    transcript: &mut Transcript,
) -> Result<(String, bool), PipelineError> {
    let schema_text = serialize_schema(&reduced.view);
    let bindings = BTreeMap::from([
        ("question", question.to_string()),
        ("schema", schema_text.clone()),
        ("sql", merged_sql.to_string()),
    ]);
    let prompt = env.prompts.render(Stage::ColumnSelection, &bindings)?;
    let refined = execute_and_refine(
        reasoning,
        env,
        Stage::ColumnSelection,
        prompt,
        question,
        &schema_text,
        max_refinements,
        transcript,
    )?;
    if refined.valid {
        Ok((refined.sql, false))
    } else {
        Ok((merged_sql.to_string(), true))
    }
}

fn timed<T>(timings: &mut BTreeMap<String, u64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let started = Instant::now();
    let out = f();
    *timings.entry(stage.to_string()).or_default() += started.elapsed().as_millis() as u64;
    out
}

pub fn run_divide_and_merge(
    example_id: &str,
    example: &BenchmarkExample,
    schema: &DatabaseSchema,
    config: &PipelineConfig,
    models: &Models,
    env: StageEnv<'_>,
) -> PipelineTrace {
    let mut trace = PipelineTrace::empty(example_id, Arm::Module, schema);
    if let Err(e) = config
        .validate()
        .and_then(|_| divide_and_merge_stages(example, schema, config, models, env, &mut trace))
    {
        trace.fail(e);
    }
    trace
}

fn divide_and_merge_stages(
    example: &BenchmarkExample,
    schema: &DatabaseSchema,
    config: &PipelineConfig,
    models: &Models,
    env: StageEnv<'_>,
    trace: &mut PipelineTrace,
) -> Result<(), PipelineError> {
    let question = example.question.as_str();
    let mut timings = std::mem::take(&mut trace.stage_timings_ms);
    let mut transcript = std::mem::take(&mut trace.transcript);
    let result = (|| {
        let (reduced, note) = timed(&mut timings, "table_selection", || {
            select_tables(question, schema, &models.reasoning, env, &mut transcript)
        })?;
        trace.reduced_schema = reduced;
        trace.notes.extend(note);

        trace.subquestions = timed(&mut timings, "decomposition", || {
            decompose(question, &trace.reduced_schema, &models.reasoning, env, &mut transcript)
        })?;

        trace.subqueries = timed(&mut timings, "subquery_generation", || {
            generate_subqueries(
                question,
                &trace.subquestions,
                &trace.reduced_schema,
                &models.coding,
                env,
                config,
                &mut transcript,
            )
        })?;

        let merged = timed(&mut timings, "merge", || match config.merge_strategy {
            MergeStrategy::LastSubquery => merge_last(&trace.subqueries).map(|sql| MergeOutcome {
                plan_text: String::new(),
                sql,
                fallback: false,
            }),
            MergeStrategy::PlannerExecutor => merge_plan_execute(
                question,
                &trace.subquestions,
                &trace.subqueries,
                models,
                &trace.reduced_schema,
                env,
                config.max_refinements,
                &mut transcript,
            ),
        })?;
        if merged.fallback {
            trace
                .notes
                .push("merge executor produced no runnable SQL; used last sub-query".into());
        }
        trace.merge_plan_text = merged.plan_text;
        trace.merge_fallback = merged.fallback;
        trace.merged_sql = merged.sql;

        trace.final_sql = if config.column_selection_enabled {
            let (sql, fell_back) = timed(&mut timings, "column_selection", || {
                column_select(
                    question,
                    &trace.reduced_schema,
                    &trace.merged_sql,
                    &models.reasoning,
                    env,
                    config.max_refinements,
                    &mut transcript,
                )
            })?;
            if fell_back {
                trace
                    .notes
                    .push("column selection produced no runnable SQL; kept merged query".into());
            }
            sql
        } else {
            trace.merged_sql.clone()
        };
        Ok(())
    })();
    trace.stage_timings_ms = timings;
    trace.transcript = transcript;
    result
}

/// One-step few-shot generation over the full schema, with the same
/// execute-and-refine loop as the pipeline.
pub fn run_baseline(
    example_id: &str,
    example: &BenchmarkExample,
    schema: &DatabaseSchema,
    coding: &Agent,
    env: StageEnv<'_>,
    max_refinements: u32,
) -> PipelineTrace {
    let mut trace = PipelineTrace::empty(example_id, Arm::Baseline, schema);
    let started = Instant::now();
    let schema_text = serialize_schema(schema);
    let result = (|| {
        let bindings = BTreeMap::from([
            ("question", example.question.clone()),
            ("schema", schema_text.clone()),
            ("examples", env.prompts.fewshot_text()),
        ]);
        let prompt = env.prompts.render(Stage::Baseline, &bindings)?;
        execute_and_refine(
            coding,
            env,
            Stage::Baseline,
            prompt,
            &example.question,
            &schema_text,
            max_refinements,
            &mut trace.transcript,
        )
    })();
    trace
        .stage_timings_ms
        .insert("baseline".into(), started.elapsed().as_millis() as u64);
    match result {
        Ok(refined) => {
            if !refined.valid {
                trace.notes.push(format!(
                    "no runnable SQL after {} refinements",
                    refined.refinement_attempts
                ));
            }
            trace.merged_sql = refined.sql.clone();
            trace.final_sql = refined.sql;
        }
        Err(e) => trace.fail(e),
    }
    trace
}
