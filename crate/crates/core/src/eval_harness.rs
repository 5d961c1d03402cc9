//! Benchmark harness comparing the proposed scorer against the baseline.
//!
//! For every task each model scores the task's events; the scores go through
//! min-max normalization, a softmax, and a halved sum of squared errors
//! against the one-hot correct label. With two models the per-task losses
//! are compared with a paired two-tailed t-test.
//!
//! # Dataset schema (version 1)
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "optional",
//!   "tasks": [{
//!     "task_id": "task0",
//!     "query": "I'm going to a concert next Thursday with a friend!",
//!     "query_time": 1700000000,
//!     "correct_label": "B",
//!     "events": [{
//!       "label": "A",
//!       "content": "User went to the university today",
//!       "timestamp": 1699565300,
//!       "importance": 7,
//!       "relevance": 0.776,
//!       "gradient": 5.102,
//!       "future_plan": false
//!     }]
//!   }]
//! }
//! ```
//!
//! `importance` defaults to 5, `gradient` to 1. When `relevance` is absent it
//! is computed by embedding `query` and `content`. Events dated after
//! `query_time` must set `future_plan`; their elapsed time is clamped to 0.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{synthesize_with_relevance, EmbedError, Embedder};
use crate::memory_math::{self, ConsolidationState, MathError, Relevance};
use crate::memory_store::{EventId, EventSource, MemoryEvent, DEFAULT_IMPORTANCE};
use crate::recall_engine::{EngineConfig, EngineError, RecallEngine, Scorer};
use crate::stats::{self, PairedTTest, StatsError};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("malformed dataset: {0}")]
    Parse(String),
    #[error("task {task_id}: field `{field}`: {reason}")]
    Task {
        task_id: String,
        field: String,
        reason: String,
    },
    #[error("task loss needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("correct index {index} out of range for {len} scores")]
    BadIndex { index: usize, len: usize },
    #[error("no models requested")]
    NoModels,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub label: String,
    pub content: String,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub future_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task_id: String,
    pub query: String,
    pub query_time: i64,
    pub correct_label: String,
    pub events: Vec<TaskEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tasks: Vec<EvalTask>,
}

impl EvalTask {
    fn err(&self, field: &str, reason: impl Into<String>) -> EvalError {
        EvalError::Task {
            task_id: self.task_id.clone(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.task_id.trim().is_empty() {
            return Err(self.err("task_id", "must not be empty"));
        }
        if self.query.trim().is_empty() {
            return Err(self.err("query", "must not be empty"));
        }
        if self.events.len() < 2 {
            return Err(self.err(
                "events",
                format!("need at least 2 events, got {}", self.events.len()),
            ));
        }
        let mut labels = HashSet::new();
        for (i, e) in self.events.iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            if !labels.insert(e.label.as_str()) {
                return Err(self.err(&field("label"), format!("duplicate label {:?}", e.label)));
            }
            if e.content.trim().is_empty() {
                return Err(self.err(&field("content"), "must not be empty"));
            }
            if let Some(imp) = e.importance {
                if !(1..=10).contains(&imp) {
                    return Err(self.err(&field("importance"), format!("{imp} outside 1..=10")));
                }
            }
            if let Some(r) = e.relevance {
                if !(r.is_finite() && (-1.0..=1.0).contains(&r)) {
                    return Err(self.err(&field("relevance"), format!("{r} outside [-1, 1]")));
                }
            }
            if let Some(g) = e.gradient {
                if !(g.is_finite() && g >= 1.0) {
                    return Err(self.err(&field("gradient"), format!("{g} must be >= 1")));
                }
            }
            if e.timestamp > self.query_time && !e.future_plan {
                return Err(self.err(
                    &field("timestamp"),
                    "after query_time; set future_plan for planned events",
                ));
            }
        }
        let matches = self
            .events
            .iter()
            .filter(|e| e.label == self.correct_label)
            .count();
        if matches != 1 {
            return Err(self.err(
                "correct_label",
                format!(
                    "{:?} must name exactly one event, found {matches}",
                    self.correct_label
                ),
            ));
        }
        Ok(())
    }

    pub fn correct_index(&self) -> usize {
        self.events
            .iter()
            .position(|e| e.label == self.correct_label)
            .expect("validated task has its correct label")
    }
}

impl Dataset {
    pub fn from_json(bytes: &[u8]) -> Result<Self, EvalError> {
        let dataset: Dataset =
            serde_json::from_slice(bytes).map_err(|e| EvalError::Parse(e.to_string()))?;
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let bytes = std::fs::read(path).map_err(|e| EvalError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&bytes)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(EvalError::Parse(format!(
                "schema_version {} unsupported (expected {DATASET_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.tasks.is_empty() {
            return Err(EvalError::Parse("dataset has no tasks".into()));
        }
        let mut ids = HashSet::new();
        for task in &self.tasks {
            if !ids.insert(task.task_id.as_str()) {
                return Err(task.err("task_id", "duplicate task id"));
            }
            task.validate()?;
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Min-max normalize, softmax, then half the squared error against the
/// one-hot vector at `correct_index`.
pub fn task_loss(scores: &[f64], correct_index: usize) -> Result<f64, EvalError> {
    if scores.len() < 2 {
        return Err(EvalError::TooFewScores(scores.len()));
    }
    if correct_index >= scores.len() {
        return Err(EvalError::BadIndex {
            index: correct_index,
            len: scores.len(),
        });
    }
    let normalized = memory_math::min_max_normalize(scores)?;
    let probs = softmax(&normalized);
    Ok(0.5
        * probs
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let target = if j == correct_index { 1.0 } else { 0.0 };
                (p - target).powi(2)
            })
            .sum::<f64>())
}

pub fn model_name(model: Scorer) -> &'static str {
    match model {
        Scorer::Proposed => "proposed",
        Scorer::Baseline => "baseline",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub label: String,
    pub relevance: f64,
    pub elapsed_seconds: f64,
    pub gradient: f64,
    pub importance: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTaskResult {
    pub model: String,
    pub scores: Vec<EventScore>,
    pub argmax_label: String,
    pub correct: bool,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub correct_label: String,
    pub results: Vec<ModelTaskResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_loss: f64,
    pub losses: Vec<f64>,
    pub correct_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    /// Difference is `first - second` in this order.
    pub models: [String; 2],
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub confidence_interval_95: [f64; 2],
}

impl TTestReport {
    fn new(models: [String; 2], t: PairedTTest) -> Self {
        Self {
            models,
            mean_difference: t.mean_difference,
            t_statistic: t.t_statistic,
            p_value: t.p_value,
            dof: t.dof,
            critical_value: t.critical_value,
            confidence_interval_95: t.confidence_interval_95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub dataset: Option<String>,
    pub models: Vec<String>,
    pub config: EngineConfig,
    pub default_importance: u8,
    pub tasks: Vec<TaskReport>,
    pub summaries: Vec<ModelSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_test: Option<TTestReport>,
    /// Why a two-model run has no t-test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_test_skipped: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

struct ResolvedEvent {
    relevance: f64,
    elapsed: f64,
    gradient: f64,
    importance: u8,
}

fn resolve_events(
    task: &EvalTask,
    embedder: &dyn Embedder,
) -> Result<Vec<ResolvedEvent>, EvalError> {
    let needs_embedding = task.events.iter().any(|e| e.relevance.is_none());
    let query = if needs_embedding {
        Some(embedder.embed(&task.query)?)
    } else {
        None
    };
    task.events
        .iter()
        .map(|e| {
            let relevance = match (e.relevance, &query) {
                (Some(r), _) => r,
                (None, Some(q)) => {
                    Relevance::saturating(q.dot(&embedder.embed(&e.content)?)).value()
                }
                (None, None) => unreachable!("query embedded when any relevance is missing"),
            };
            Ok(ResolvedEvent {
                relevance,
                elapsed: ((task.query_time - e.timestamp) as f64).max(0.0),
                gradient: e.gradient.unwrap_or(1.0),
                importance: e.importance.unwrap_or(DEFAULT_IMPORTANCE),
            })
        })
        .collect()
}

fn score_event(model: Scorer, e: &ResolvedEvent, config: &EngineConfig) -> Result<f64, MathError> {
    let r = Relevance::saturating(e.relevance);
    match model {
        Scorer::Proposed => {
            memory_math::recall_probability(r, e.elapsed, e.gradient, &config.scaling)
        }
        Scorer::Baseline => {
            memory_math::baseline_score(r, e.elapsed, e.importance as i64, &config.baseline)
        }
    }
}

fn evaluate_task(
    task: &EvalTask,
    models: &[Scorer],
    config: &EngineConfig,
    embedder: &dyn Embedder,
) -> Result<TaskReport, EvalError> {
    let resolved = resolve_events(task, embedder)?;
    let correct = task.correct_index();
    let mut results = Vec::with_capacity(models.len());
    for &model in models {
        let mut scores = Vec::with_capacity(resolved.len());
        for (event, r) in task.events.iter().zip(&resolved) {
            scores.push(EventScore {
                label: event.label.clone(),
                relevance: r.relevance,
                elapsed_seconds: r.elapsed,
                gradient: r.gradient,
                importance: r.importance,
                score: score_event(model, r, config)?,
            });
        }
        // first maximum wins ties
        let argmax = scores.iter().enumerate().fold(0, |best, (i, s)| {
            if s.score > scores[best].score {
                i
            } else {
                best
            }
        });
        let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
        results.push(ModelTaskResult {
            model: model_name(model).into(),
            argmax_label: scores[argmax].label.clone(),
            correct: argmax == correct,
            loss: task_loss(&raw, correct)?,
            scores,
        });
    }
    Ok(TaskReport {
        task_id: task.task_id.clone(),
        correct_label: task.correct_label.clone(),
        results,
    })
}

/// Scores every task with every model and aggregates the losses.
pub fn run_benchmark_on(
    dataset: &Dataset,
    models: &[Scorer],
    config: &EngineConfig,
    embedder: &dyn Embedder,
) -> Result<EvalReport, EvalError> {
    if models.is_empty() {
        return Err(EvalError::NoModels);
    }
    config.validate()?;
    dataset.validate()?;
    let mut tasks: Vec<&EvalTask> = dataset.tasks.iter().collect();
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let task_reports = tasks
        .into_iter()
        .map(|t| evaluate_task(t, models, config, embedder))
        .collect::<Result<Vec<_>, _>>()?;

    let summaries: Vec<ModelSummary> = models
        .iter()
        .enumerate()
        .map(|(m, &model)| {
            let losses: Vec<f64> = task_reports.iter().map(|t| t.results[m].loss).collect();
            ModelSummary {
                model: model_name(model).into(),
                mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                correct_count: task_reports.iter().filter(|t| t.results[m].correct).count(),
                losses,
            }
        })
        .collect();

    let (t_test, t_test_skipped) = if summaries.len() == 2 {
        match stats::paired_t_test(&summaries[0].losses, &summaries[1].losses) {
            Ok(t) => (
                Some(TTestReport::new(
                    [summaries[0].model.clone(), summaries[1].model.clone()],
                    t,
                )),
                None,
            ),
            Err(e @ (StatsError::TooFew(_) | StatsError::ZeroVariance)) => {
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        (None, None)
    };

    Ok(EvalReport {
        report_version: REPORT_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        models: models.iter().map(|m| model_name(*m).to_string()).collect(),
        config: config.clone(),
        default_importance: DEFAULT_IMPORTANCE,
        tasks: task_reports,
        summaries,
        t_test,
        t_test_skipped,
    })
}

pub fn run_benchmark(
    dataset_path: &Path,
    models: &[Scorer],
    config: &EngineConfig,
    embedder: &dyn Embedder,
) -> Result<EvalReport, EvalError> {
    let dataset = Dataset::load(dataset_path)?;
    run_benchmark_on(&dataset, models, config, embedder)
}

/// Plain-text rendering of a report.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(name) = &report.dataset {
        let _ = writeln!(out, "dataset: {name}");
    }
    let _ = writeln!(
        out,
        "models: {}   (events without importance use {})",
        report.models.join(", "),
        report.default_importance
    );
    for task in &report.tasks {
        let _ = writeln!(out, "\n{} (correct: {})", task.task_id, task.correct_label);
        for result in &task.results {
            let _ = writeln!(
                out,
                "  {:<9} argmax {:<6} {:<9} loss {:.4}",
                result.model,
                result.argmax_label,
                if result.correct {
                    "correct"
                } else {
                    "incorrect"
                },
                result.loss
            );
            let _ = writeln!(
                out,
                "    {:<8} {:>9} {:>12} {:>8} {:>4} {:>8}",
                "event", "relevance", "time (s)", "grad", "imp", "score"
            );
            for s in &result.scores {
                let _ = writeln!(
                    out,
                    "    {:<8} {:>9.3} {:>12.0} {:>8.3} {:>4} {:>8.3}",
                    s.label, s.relevance, s.elapsed_seconds, s.gradient, s.importance, s.score
                );
            }
        }
    }
    let _ = writeln!(out, "\nsummary");
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "  {:<9} mean loss {:.4}   correct {}/{}",
            s.model,
            s.mean_loss,
            s.correct_count,
            s.losses.len()
        );
    }
    if let Some(t) = &report.t_test {
        let _ = writeln!(
            out,
            "\npaired t-test ({} - {}): t = {:.3}, p = {:.6}, dof = {}, critical = ±{:.3}",
            t.models[0], t.models[1], t.t_statistic, t.p_value, t.dof, t.critical_value
        );
        let _ = writeln!(
            out,
            "  mean difference {:.4}, 95% CI [{:.4}, {:.4}]",
            t.mean_difference, t.confidence_interval_95[0], t.confidence_interval_95[1]
        );
    }
    if let Some(reason) = &report.t_test_skipped {
        let _ = writeln!(out, "\npaired t-test skipped: {reason}");
    }
    out
}

/// Loads a task's events into the engine's store so that a recall with the
/// task's query reproduces the task's relevance, elapsed time and gradient.
///
/// Events with a given relevance get a synthetic embedding at exactly that
/// cosine to the query; others are embedded from their content.
pub fn replay_task(
    engine: &mut RecallEngine,
    task: &EvalTask,
) -> Result<Vec<(String, EventId)>, EvalError> {
    task.validate()?;
    let query = engine.embedder().embed(&task.query)?;
    let mut out = Vec::with_capacity(task.events.len());
    for (i, e) in task.events.iter().enumerate() {
        let embedding = match e.relevance {
            Some(r) => synthesize_with_relevance(&query, r, i as u64 + 1)?,
            None => engine.embedder().embed(&e.content)?,
        };
        let g = e.gradient.unwrap_or(1.0);
        let consolidation = if g > 1.0 {
            ConsolidationState {
                n: (g - 1.0).ceil() as u64,
                g,
                last_recalled_at: Some(e.timestamp),
            }
        } else {
            ConsolidationState::fresh()
        };
        let event = MemoryEvent {
            id: EventId::new(),
            content: e.content.clone(),
            embedding,
            created_at: e.timestamp,
            consolidation,
            importance: e.importance,
            tags: vec![format!("{}:{}", task.task_id, e.label)],
            source: EventSource::Synthetic,
        };
        let stored = engine
            .store_mut()
            .insert_event(event)
            .map_err(EngineError::from)?;
        out.push((e.label.clone(), stored.id));
    }
    Ok(out)
}
