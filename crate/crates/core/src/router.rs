//! Per-question choice between the one-step baseline and the
//! divide-and-merge pipeline.
//!
//! Three routers are provided: a table-count threshold, a logistic model
//! over [`FeatureVector`], and an LLM judge. Training labels come from
//! disagreement examples only: label 1 when divide-and-merge was correct and
//! the baseline was not, label 0 for the reverse.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{serialize_schema, DatabaseSchema, FeatureVector};
use crate::llm::{Agent, LlmError, Transcript};
use crate::prompts::{PromptError, PromptSet, Stage};

const STD_FLOOR: f64 = 1e-9;
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("training data needs at least two rows with both labels present")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("router accuracy is undefined: no disagreement examples")]
    UndefinedAccuracy,
    #[error("decisions and oracle labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid router model: {0}")]
    InvalidModel(String),
    #[error("router model file {path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Baseline,
    DivideAndMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Heuristic,
    Logistic,
    Judge,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub branch: Branch,
    /// Confidence that divide-and-merge is the better branch.
    pub score: f64,
    pub router_kind: RouterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RouteDecision {
    fn from_score(score: f64, router_kind: RouterKind) -> Self {
        RouteDecision {
            branch: if score >= DECISION_THRESHOLD {
                Branch::DivideAndMerge
            } else {
                Branch::Baseline
            },
            score,
            router_kind,
            note: None,
        }
    }
}

pub fn route_heuristic(features: &FeatureVector, table_threshold: u32) -> RouteDecision {
    let complex = features.table_count >= table_threshold;
    RouteDecision {
        branch: if complex {
            Branch::DivideAndMerge
        } else {
            Branch::Baseline
        },
        score: if complex { 1.0 } else { 0.0 },
        router_kind: RouterKind::Heuristic,
        note: None,
    }
}

/// The branch a perfect router would pick: defined only when exactly one
/// arm is correct.
pub fn oracle_branch(baseline_correct: bool, module_correct: bool) -> Option<Branch> {
    match (baseline_correct, module_correct) {
        (true, false) => Some(Branch::Baseline),
        (false, true) => Some(Branch::DivideAndMerge),
        _ => None,
    }
}

pub fn route_oracle(baseline_correct: bool, module_correct: bool) -> RouteDecision {
    let branch = oracle_branch(baseline_correct, module_correct).unwrap_or(Branch::Baseline);
    RouteDecision {
        branch,
        score: if branch == Branch::DivideAndMerge { 1.0 } else { 0.0 },
        router_kind: RouterKind::Oracle,
        note: None,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingDataset {
    pub rows: Vec<(FeatureVector, u8)>,
}

impl RoutingDataset {
    /// Builds training rows from per-example outcomes, skipping agreements.
    pub fn from_outcomes<I>(outcomes: I) -> Self
    where
        I: IntoIterator<Item = (FeatureVector, bool, bool)>,
    {
        let rows = outcomes
            .into_iter()
            .filter_map(|(f, b, m)| oracle_branch(b, m).map(|branch| (f, u8::from(branch == Branch::DivideAndMerge))))
            .collect();
        RoutingDataset { rows }
    }
}

/// Standardised logistic regression over the six routing features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    #[serde(default = "default_feature_names")]
    pub feature_names: Vec<String>,
}

fn default_feature_names() -> Vec<String> {
    FeatureVector::NAMES.iter().map(|s| s.to_string()).collect()
}

impl RouterModel {
    pub fn zeros() -> Self {
        RouterModel {
            weights: vec![0.0; FeatureVector::LEN],
            bias: 0.0,
            feature_means: vec![0.0; FeatureVector::LEN],
            feature_stds: vec![1.0; FeatureVector::LEN],
            feature_names: default_feature_names(),
        }
    }

    pub fn validate(&self) -> Result<(), RouterError> {
        let n = FeatureVector::LEN;
        if self.weights.len() != n || self.feature_means.len() != n || self.feature_stds.len() != n {
            return Err(RouterError::InvalidModel(format!(
                "expected {n} weights, means and stds"
            )));
        }
        if self.feature_stds.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(RouterError::InvalidModel("every std must be > 0".into()));
        }
        if self.feature_names.len() != n {
            return Err(RouterError::InvalidModel("feature_names must list six names".into()));
        }
        Ok(())
    }

    fn standardize(&self, raw: &[f64; FeatureVector::LEN]) -> [f64; FeatureVector::LEN] {
        let mut z = [0.0; FeatureVector::LEN];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = (raw[k] - self.feature_means[k]) / self.feature_stds[k];
        }
        z
    }

    fn logit(&self, raw: &[f64; FeatureVector::LEN]) -> f64 {
        let z = self.standardize(raw);
        self.bias + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn score(&self, features: &FeatureVector) -> f64 {
        sigmoid(self.logit(&features.to_array()))
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = fs::read_to_string(path).map_err(|e| RouterError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let model: RouterModel = serde_json::from_str(&text).map_err(|e| RouterError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), RouterError> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text + "\n").map_err(|e| RouterError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            learning_rate: 0.1,
            epochs: 500,
            l2: 0.0,
        }
    }
}

/// Mean logistic loss plus `l2/2 · ‖w‖²` (bias unpenalised).
pub fn training_loss(model: &RouterModel, data: &RoutingDataset, l2: f64) -> f64 {
    let n = data.rows.len().max(1) as f64;
    let data_loss: f64 = data
        .rows
        .iter()
        .map(|(f, y)| {
            let z = model.logit(&f.to_array());
            // -[y log σ(z) + (1-y) log(1-σ(z))]
            softplus(z) - f64::from(*y) * z
        })
        .sum::<f64>()
        / n;
    data_loss + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Full-batch gradient descent; returns the model and the loss after every
/// epoch.
pub fn train_logistic_with_history(
    data: &RoutingDataset,
    options: TrainingOptions,
) -> Result<(RouterModel, Vec<f64>), RouterError> {
    if let Some((_, bad)) = data.rows.iter().find(|(_, y)| *y > 1) {
        return Err(RouterError::BadLabel(*bad));
    }
    let positives = data.rows.iter().filter(|(_, y)| *y == 1).count();
    if data.rows.len() < 2 || positives == 0 || positives == data.rows.len() {
        return Err(RouterError::SingleClass);
    }
    let d = FeatureVector::LEN;
    let n = data.rows.len() as f64;
    let raw: Vec<[f64; FeatureVector::LEN]> = data.rows.iter().map(|(f, _)| f.to_array()).collect();
    let labels: Vec<f64> = data.rows.iter().map(|(_, y)| f64::from(*y)).collect();

    let mut means = vec![0.0; d];
    for row in &raw {
        for k in 0..d {
            means[k] += row[k] / n;
        }
    }
    let mut stds = vec![0.0; d];
    for row in &raw {
        for k in 0..d {
            stds[k] += (row[k] - means[k]).powi(2) / n;
        }
    }
    for s in &mut stds {
        *s = s.sqrt().max(STD_FLOOR);
    }

    let mut model = RouterModel {
        weights: vec![0.0; d],
        bias: 0.0,
        feature_means: means,
        feature_stds: stds,
        feature_names: default_feature_names(),
    };
    let standardized: Vec<[f64; FeatureVector::LEN]> = raw.iter().map(|r| model.standardize(r)).collect();

    let mut history = Vec::with_capacity(options.epochs);
    for _ in 0..options.epochs {
        let mut grad_w = vec![0.0; d];
        let mut grad_b = 0.0;
        for (z, y) in standardized.iter().zip(&labels) {
            let logit = model.bias + model.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            let residual = sigmoid(logit) - y;
            for (g, x) in grad_w.iter_mut().zip(z) {
                *g += residual * x / n;
            }
            grad_b += residual / n;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= options.learning_rate * (g + options.l2 * *w);
        }
        model.bias -= options.learning_rate * grad_b;
        history.push(training_loss(&model, data, options.l2));
    }
    Ok((model, history))
}

pub fn train_logistic(
    data: &RoutingDataset,
    learning_rate: f64,
    epochs: usize,
    l2: f64,
) -> Result<RouterModel, RouterError> {
    train_logistic_with_history(
        data,
        TrainingOptions {
            learning_rate,
            epochs,
            l2,
        },
    )
    .map(|(m, _)| m)
}

pub fn route_logistic(model: &RouterModel, features: &FeatureVector) -> RouteDecision {
    RouteDecision::from_score(model.score(features), RouterKind::Logistic)
}

/// Externally computed per-example scores (for instance from a
/// gradient-boosted model trained outside this crate).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: BTreeMap<String, f64>,
}

impl ScoreTable {
    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = fs::read_to_string(path).map_err(|e| RouterError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let table: ScoreTable = serde_json::from_str(&text).map_err(|e| RouterError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some((id, s)) = table.scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(RouterError::InvalidModel(format!("score {s} for `{id}` outside [0,1]")));
        }
        Ok(table)
    }

    /// `None` when the example has no score.
    pub fn route(&self, example_id: &str) -> Option<RouteDecision> {
        self.scores
            .get(example_id)
            .map(|&s| RouteDecision::from_score(s, RouterKind::Logistic))
    }
}

/// Asks the reasoning model to label the question SIMPLE or COMPLEX.
pub fn route_judge(
    question: &str,
    schema: &DatabaseSchema,
    reasoning: &Agent,
    prompts: &PromptSet,
    transcript: &mut Transcript,
) -> Result<RouteDecision, RouterError> {
    let bindings = BTreeMap::from([("question", question.to_string()), ("schema", serialize_schema(schema))]);
    let prompt = prompts.render(Stage::RouteJudge, &bindings)?;
    let reply = reasoning.ask(Stage::RouteJudge.label(), 0, prompt, transcript)?;
    let verdict = reply
        .trim()
        .trim_matches(|c: char| !c.is_ascii_alphabetic())
        .to_ascii_uppercase();
    let decision = match verdict.as_str() {
        "COMPLEX" => RouteDecision {
            branch: Branch::DivideAndMerge,
            score: 1.0,
            router_kind: RouterKind::Judge,
            note: None,
        },
        "SIMPLE" => RouteDecision {
            branch: Branch::Baseline,
            score: 0.0,
            router_kind: RouterKind::Judge,
            note: None,
        },
        _ => RouteDecision {
            branch: Branch::Baseline,
            score: 0.5,
            router_kind: RouterKind::Judge,
            note: Some(format!("unparseable judge reply: {}", reply.trim())),
        },
    };
    Ok(decision)
}

/// Fraction of decisions that match the oracle branch, over the examples
/// where an oracle branch exists.
pub fn router_accuracy(decisions: &[RouteDecision], oracle: &[Option<Branch>]) -> Result<f64, RouterError> {
    if decisions.len() != oracle.len() {
        return Err(RouterError::LengthMismatch(decisions.len(), oracle.len()));
    }
    let (hits, total) = decisions
        .iter()
        .zip(oracle)
        .filter_map(|(d, o)| o.map(|b| d.branch == b))
        .fold((0usize, 0usize), |(h, t), hit| (h + usize::from(hit), t + 1));
    if total == 0 {
        return Err(RouterError::UndefinedAccuracy);
    }
    Ok(hits as f64 / total as f64)
}
