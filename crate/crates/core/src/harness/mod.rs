//! Benchmark orchestration: runs arms over a dataset with a worker pool,
//! caches per-example outcomes, persists traces, and scores predictions.

mod cache;
mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, Cache};
pub use config::{
    DatasetConfig, EndpointConfig, ExecutorConfig, ModelsConfig, PromptsConfig, RouterChoice, RouterConfig, RunConfig,
};
pub use report::{
    build_report, compare_runs, complexity_correlation, complexity_groups, compute_ex, default_sweep_points,
    disagreement, emit_json, emit_markdown, emit_report, oracle_ex, router_sweep, EvalReport, Percent, ReportFormat,
    ReportLabel, RunComparison,
};

use crate::dataset::{extract_features, load_examples, load_schemas, BenchmarkExample, DatabaseSchema, FeatureVector};
use crate::executor::{execution_accuracy, ExecError, SqlRunner};
use crate::llm::{LlmError, Transcript};
use crate::pipeline::{run_baseline, run_divide_and_merge, Arm, Models, PipelineError, PipelineTrace, StageEnv};
use crate::prompts::{PromptError, PromptSet};
use crate::router::{
    route_heuristic, route_judge, route_logistic, route_oracle, Branch, RouteDecision, RouterError, RouterModel,
    ScoreTable,
};
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no scored records")]
    EmptyRecords,
    #[error("{0} correctness bit missing on some records")]
    MissingBit(&'static str),
    #[error("need at least 2 distinct table counts, got {0}")]
    TooFewGroups(usize),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunArm {
    Baseline,
    Module,
    Both,
    Routed,
}

/// Trace files relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TracePaths {
    pub baseline: Option<PathBuf>,
    pub module: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerExampleRecord {
    pub example_id: String,
    pub db_id: String,
    pub table_count: u32,
    pub features: FeatureVector,
    pub baseline_correct: Option<bool>,
    pub module_correct: Option<bool>,
    pub route_taken: Option<RouteDecision>,
    pub final_sql_baseline: Option<String>,
    pub final_sql_module: Option<String>,
    pub trace_paths: TracePaths,
    /// Provider or execution failures; the affected arm scores 0.
    #[serde(default)]
    pub errors: Vec<String>,
    /// Set when the gold query itself fails; such examples leave N.
    #[serde(default)]
    pub dataset_error: Option<String>,
}

impl PerExampleRecord {
    pub fn new(example_id: impl Into<String>, db_id: impl Into<String>) -> Self {
        PerExampleRecord {
            example_id: example_id.into(),
            db_id: db_id.into(),
            table_count: 0,
            features: FeatureVector::default(),
            baseline_correct: None,
            module_correct: None,
            route_taken: None,
            final_sql_baseline: None,
            final_sql_module: None,
            trace_paths: TracePaths::default(),
            errors: Vec::new(),
            dataset_error: None,
        }
    }

    /// Record carrying only correctness bits, for report arithmetic.
    pub fn with_bits(example_id: impl Into<String>, table_count: u32, baseline: bool, module: bool) -> Self {
        let mut r = PerExampleRecord::new(example_id, "synthetic");
        r.table_count = table_count;
        r.features.table_count = table_count;
        r.baseline_correct = Some(baseline);
        r.module_correct = Some(module);
        r
    }

    pub fn bit(&self, arm: Arm) -> Option<bool> {
        match arm {
            Arm::Baseline => self.baseline_correct,
            Arm::Module => self.module_correct,
        }
    }

    fn set_outcome(&mut self, arm: Arm, outcome: &ArmOutcome, trace_path: Option<PathBuf>) {
        if let Some(gold) = &outcome.gold_error {
            self.dataset_error = Some(gold.clone());
        }
        if let Some(e) = &outcome.error {
            self.errors.push(format!("{}: {e}", arm.label()));
        }
        match arm {
            Arm::Baseline => {
                self.baseline_correct = Some(outcome.correct);
                self.final_sql_baseline = Some(outcome.final_sql.clone());
                self.trace_paths.baseline = trace_path;
            }
            Arm::Module => {
                self.module_correct = Some(outcome.correct);
                self.final_sql_module = Some(outcome.final_sql.clone());
                self.trace_paths.module = trace_path;
            }
        }
    }
}

/// Cached result of running one arm on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub final_sql: String,
    pub correct: bool,
    pub reason: String,
    pub error: Option<String>,
    pub gold_error: Option<String>,
    pub trace: PipelineTrace,
}

/// Supplies the model endpoints for each example. Scripted tests return a
/// fresh script per example; live runs share one pair of agents.
pub trait ModelFactory: Sync {
    fn models_for(&self, example_id: &str, example: &BenchmarkExample) -> Result<Models, HarnessError>;
}

/// Agents built once from the run configuration.
pub struct ConfiguredModels {
    models: Models,
}

impl ConfiguredModels {
    pub fn from_config(config: &ModelsConfig) -> Result<Self, HarnessError> {
        Ok(ConfiguredModels {
            models: Models {
                reasoning: config.reasoning.agent()?,
                coding: config.coding.agent()?,
            },
        })
    }
}

impl ModelFactory for ConfiguredModels {
    fn models_for(&self, _: &str, _: &BenchmarkExample) -> Result<Models, HarnessError> {
        Ok(self.models.clone())
    }
}

/// Zero-padded position in the example file.
pub fn example_id(index: usize) -> String {
    format!("{index:05}")
}

enum LoadedRouter {
    Heuristic(u32),
    Logistic(RouterModel),
    Judge,
    Oracle,
    Scores(ScoreTable),
}

struct Runner<'a> {
    config: &'a RunConfig,
    arm: RunArm,
    prompts: PromptSet,
    prompt_digest: String,
    schemas: BTreeMap<String, DatabaseSchema>,
    factory: &'a dyn ModelFactory,
    cache: Cache,
    router: Option<LoadedRouter>,
}

/// Runs `arm` over the configured dataset and writes `records.json`,
/// traces and transcripts under `config.run_dir`.
pub fn run_benchmark(
    config: &RunConfig,
    arm: RunArm,
    factory: &dyn ModelFactory,
) -> Result<Vec<PerExampleRecord>, HarnessError> {
    config.validate()?;
    let schemas = load_schemas(&config.dataset.tables_path(), &config.dataset.root)?;
    let mut examples = load_examples(&config.dataset.examples_path())?;
    if let Some(limit) = config.dataset.limit {
        examples.truncate(limit);
    }
    let prompts = PromptSet::load(config.prompts.dir.as_deref(), config.prompts.fewshot_file.as_deref())?;
    let router = if arm == RunArm::Routed {
        Some(load_router(&config.router)?)
    } else {
        None
    };
    for sub in ["traces", "transcripts"] {
        let dir = config.run_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }
    let runner = Runner {
        config,
        arm,
        prompt_digest: prompts.digest(),
        prompts,
        schemas,
        factory,
        cache: Cache::open(&config.cache_dir())?,
        router,
    };

    let slots: Vec<Mutex<Option<PerExampleRecord>>> = examples.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.worker_count.min(examples.len()).max(1);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= examples.len() {
                    break;
                }
                match runner.process(i, &examples[i]) {
                    Ok(record) => *slots[i].lock().unwrap() = Some(record),
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                        next.store(examples.len(), Ordering::SeqCst);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let records: Vec<PerExampleRecord> = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every example processed"))
        .collect();
    save_records(&config.run_dir.join("records.json"), &records)?;
    Ok(records)
}

fn load_router(config: &RouterConfig) -> Result<LoadedRouter, HarnessError> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| HarnessError::Config(format!("router.{key} is required for this router kind")))
    };
    Ok(match config.kind {
        RouterChoice::Heuristic => LoadedRouter::Heuristic(config.table_threshold),
        RouterChoice::Logistic => LoadedRouter::Logistic(RouterModel::load(&need(&config.model_file, "model_file")?)?),
        RouterChoice::Judge => LoadedRouter::Judge,
        RouterChoice::Oracle => LoadedRouter::Oracle,
        RouterChoice::ScoreTable => LoadedRouter::Scores(ScoreTable::load(&need(&config.score_file, "score_file")?)?),
    })
}

impl Runner<'_> {
    fn env<'b>(&'b self, runner: &'b SqlRunner) -> StageEnv<'b> {
        StageEnv {
            prompts: &self.prompts,
            runner,
        }
    }

    fn arm_key(&self, id: &str, arm: Arm, models: &Models) -> String {
        let p = &self.config.pipeline;
        cache_key(&[
            id,
            arm.label(),
            &serde_json::to_string(&p.merge_strategy).unwrap(),
            if p.column_selection_enabled { "cs" } else { "no_cs" },
            &models.reasoning.model_id,
            &models.coding.model_id,
            &self.prompt_digest,
            &p.max_refinements.to_string(),
        ])
    }

    fn process(&self, index: usize, example: &BenchmarkExample) -> Result<PerExampleRecord, HarnessError> {
        let id = example_id(index);
        let mut record = PerExampleRecord::new(&id, &example.db_id);
        let Some(schema) = self.schemas.get(&example.db_id) else {
            record.dataset_error = Some(format!("unknown database `{}`", example.db_id));
            return Ok(record);
        };
        record.table_count = schema.table_count() as u32;
        record.features = extract_features(&example.question, schema);
        let sql_runner = SqlRunner::new(schema.db_file_path.clone()).with_timeout(self.config.executor.timeout_ms);

        let models = match self.factory.models_for(&id, example) {
            Ok(m) => m,
            Err(e) => {
                record.errors.push(e.to_string());
                match self.arms_without_router() {
                    Some(arms) => arms.iter().for_each(|&a| match a {
                        Arm::Baseline => record.baseline_correct = Some(false),
                        Arm::Module => record.module_correct = Some(false),
                    }),
                    None => record.baseline_correct = Some(false),
                }
                return Ok(record);
            }
        };

        if let Some(arms) = self.arms_without_router() {
            for arm in arms {
                let (outcome, path) = self.run_arm(&id, example, schema, arm, &models, &sql_runner)?;
                record.set_outcome(arm, &outcome, Some(path));
            }
            return Ok(record);
        }

        let decision = self.route(&id, example, schema, &models, &sql_runner, &mut record)?;
        let taken = match decision.branch {
            Branch::Baseline => Arm::Baseline,
            Branch::DivideAndMerge => Arm::Module,
        };
        let (outcome, path) = self.run_arm(&id, example, schema, taken, &models, &sql_runner)?;
        record.set_outcome(taken, &outcome, Some(path));
        let other = match taken {
            Arm::Baseline => Arm::Module,
            Arm::Module => Arm::Baseline,
        };
        if record.bit(other).is_none() {
            if let Some(cached) = self.cache.get::<ArmOutcome>(&self.arm_key(&id, other, &models))? {
                record.set_outcome(other, &cached, None);
            }
        }
        record.route_taken = Some(decision);
        Ok(record)
    }

    fn arms_without_router(&self) -> Option<Vec<Arm>> {
        match self.router {
            Some(_) => None,
            None => Some(match self.arm {
                RunArm::Baseline => vec![Arm::Baseline],
                RunArm::Module => vec![Arm::Module],
                _ => vec![Arm::Baseline, Arm::Module],
            }),
        }
    }

    fn route(
        &self,
        id: &str,
        example: &BenchmarkExample,
        schema: &DatabaseSchema,
        models: &Models,
        sql_runner: &SqlRunner,
        record: &mut PerExampleRecord,
    ) -> Result<RouteDecision, HarnessError> {
        let router = self.router.as_ref().expect("routed run has a router");
        if let LoadedRouter::Oracle = router {
            let (b, pb) = self.run_arm(id, example, schema, Arm::Baseline, models, sql_runner)?;
            let (m, pm) = self.run_arm(id, example, schema, Arm::Module, models, sql_runner)?;
            record.set_outcome(Arm::Baseline, &b, Some(pb));
            record.set_outcome(Arm::Module, &m, Some(pm));
            return Ok(route_oracle(b.correct, m.correct));
        }
        let key = cache_key(&[
            id,
            "router",
            &serde_json::to_string(&self.config.router).unwrap(),
            &models.reasoning.model_id,
            &self.prompt_digest,
        ]);
        if let Some(decision) = self.cache.get::<RouteDecision>(&key)? {
            return Ok(decision);
        }
        let decision = match router {
            LoadedRouter::Heuristic(t) => route_heuristic(&record.features, *t),
            LoadedRouter::Logistic(model) => route_logistic(model, &record.features),
            LoadedRouter::Scores(table) => match table.route(id) {
                Some(d) => d,
                None => {
                    let mut d = route_heuristic(&record.features, self.config.router.table_threshold);
                    d.note = Some("no external score; used table-count heuristic".into());
                    d
                }
            },
            LoadedRouter::Judge => {
                let mut transcript = Transcript::new();
                let result = route_judge(
                    &example.question,
                    schema,
                    &models.reasoning,
                    &self.prompts,
                    &mut transcript,
                );
                self.write_transcript(&format!("{id}.router"), &transcript)?;
                match result {
                    Ok(d) => d,
                    Err(e) => {
                        record.errors.push(format!("router: {e}"));
                        return Ok(RouteDecision {
                            branch: Branch::Baseline,
                            score: 0.5,
                            router_kind: crate::router::RouterKind::Judge,
                            note: Some("judge call failed; defaulted to baseline".into()),
                        });
                    }
                }
            }
            LoadedRouter::Oracle => unreachable!(),
        };
        self.cache.put(&key, &decision)?;
        Ok(decision)
    }

    fn run_arm(
        &self,
        id: &str,
        example: &BenchmarkExample,
        schema: &DatabaseSchema,
        arm: Arm,
        models: &Models,
        sql_runner: &SqlRunner,
    ) -> Result<(ArmOutcome, PathBuf), HarnessError> {
        let key = self.arm_key(id, arm, models);
        let outcome = match self.cache.get::<ArmOutcome>(&key)? {
            Some(hit) => hit,
            None => {
                let env = self.env(sql_runner);
                let trace = match arm {
                    Arm::Baseline => run_baseline(
                        id,
                        example,
                        schema,
                        &models.coding,
                        env,
                        self.config.pipeline.max_refinements,
                    ),
                    Arm::Module => run_divide_and_merge(id, example, schema, &self.config.pipeline, models, env),
                };
                let outcome = score(id, example, trace, sql_runner, self.config.executor.float_tolerance);
                if outcome.trace.error.is_none() {
                    self.cache.put(&key, &outcome)?;
                }
                outcome
            }
        };
        let stem = format!("{id}.{}", arm.label());
        let rel = PathBuf::from("traces").join(format!("{stem}.json"));
        let path = self.config.run_dir.join(&rel);
        let json = serde_json::to_string_pretty(&outcome.trace).expect("trace serializes");
        fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
        self.write_transcript(&stem, &outcome.trace.transcript)?;
        Ok((outcome, rel))
    }

    fn write_transcript(&self, stem: &str, transcript: &Transcript) -> Result<(), HarnessError> {
        let path = self.config.run_dir.join("transcripts").join(format!("{stem}.jsonl"));
        let mut out = Vec::new();
        for entry in transcript {
            serde_json::to_writer(&mut out, entry).expect("transcript serializes");
            out.write_all(b"\n").expect("write to vec");
        }
        fs::write(&path, out).map_err(|e| HarnessError::io(&path, e))
    }
}

/// Executes a trace's final SQL against the gold query.
pub fn score(
    id: &str,
    example: &BenchmarkExample,
    trace: PipelineTrace,
    sql_runner: &SqlRunner,
    tolerance: f64,
) -> ArmOutcome {
    let predicted = Some(trace.final_sql.as_str()).filter(|s| !s.trim().is_empty());
    let (correct, reason, error, gold_error) = match execution_accuracy(id, example, predicted, sql_runner, tolerance) {
        Ok(v) => (v.correct(), v.verdict.reason.clone(), None, None),
        Err(ExecError::GoldFailed { message, .. }) => (false, "gold query failed".into(), None, Some(message)),
        Err(e) => (false, "execution error".into(), Some(e.to_string()), None),
    };
    ArmOutcome {
        final_sql: trace.final_sql.clone(),
        correct,
        reason,
        error: error.or_else(|| trace.error.clone()),
        gold_error,
        trace,
    }
}

pub fn save_records(path: &Path, records: &[PerExampleRecord]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(records).expect("records serialize");
    fs::write(path, json).map_err(|e| HarnessError::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<PerExampleRecord>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, e))
}
