//! The recall cycle: embed the query, search candidates, score them, apply
//! the trigger policy, and consolidate the one memory that was recalled.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, Embedding};
use crate::llm::{ChatClient, ChatMessage, ChatRequest, LlmError};
use crate::memory_math::{
    self, BaselineWeights, ConsolidationState, MathError, Relevance, TimeScaling,
};
use crate::memory_store::{EventId, EventSource, MemoryEvent, MemoryStore, NewEvent, StoreError};
use crate::prompt::{build_prompt, PromptBundle};

pub const DEFAULT_THRESHOLD: f64 = 0.86;
pub const DEFAULT_CANDIDATE_K: usize = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("language model call failed: {0}")]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerPolicy {
    /// The most relevant candidate whose score reaches the threshold.
    ThresholdOnly,
    /// The highest-scoring candidate, unconditionally.
    ArgmaxOnly,
    /// The highest-scoring candidate, if its score reaches the threshold.
    #[default]
    ArgmaxAndThreshold,
}

impl std::str::FromStr for TriggerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold-only" => Ok(Self::ThresholdOnly),
            "argmax-only" => Ok(Self::ArgmaxOnly),
            "argmax-and-threshold" => Ok(Self::ArgmaxAndThreshold),
            other => Err(format!(
                "unknown policy {other:?} (expected threshold-only, argmax-only or argmax-and-threshold)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    /// Normalized recall probability with consolidation.
    #[default]
    Proposed,
    /// Recency + importance + relevance weighted sum.
    Baseline,
}

impl std::str::FromStr for Scorer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "baseline" => Ok(Self::Baseline),
            other => Err(format!(
                "unknown scorer {other:?} (expected proposed or baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub threshold: f64,
    pub trigger_policy: TriggerPolicy,
    pub candidate_k: usize,
    pub scaling: TimeScaling,
    pub baseline: BaselineWeights,
    pub scorer: Scorer,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            trigger_policy: TriggerPolicy::default(),
            candidate_k: DEFAULT_CANDIDATE_K,
            scaling: TimeScaling::default(),
            baseline: BaselineWeights::default(),
            scorer: Scorer::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(EngineError::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.candidate_k == 0 {
            return Err(EngineError::Config("candidate_k must be at least 1".into()));
        }
        self.scaling.validate()?;
        self.baseline.validate()?;
        Ok(())
    }
}

/// Inputs and score of one candidate memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub event_id: EventId,
    pub content: String,
    pub created_at: i64,
    pub relevance: f64,
    pub elapsed_seconds: f64,
    /// Set when the event is dated after the query time; elapsed was clamped to 0.
    pub clamped_future: bool,
    pub g: f64,
    pub n: u64,
    pub importance: u8,
    pub score: f64,
    /// Position in relevance order (0 = most relevant).
    pub relevance_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalledMemory {
    pub event: MemoryEvent,
    pub score: f64,
    pub relevance: f64,
    pub elapsed_seconds: f64,
    /// Gradient used for scoring, before this recall's update.
    pub g: f64,
    /// State after this recall, absent on dry runs.
    pub consolidation_after: Option<ConsolidationState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallOutcome {
    pub recalled: Option<RecalledMemory>,
    /// Candidates ordered by score (descending).
    pub candidates: Vec<ScoredCandidate>,
    pub query_time: i64,
    pub warnings: Vec<String>,
}

impl RecallOutcome {
    pub fn empty(query_time: i64) -> Self {
        Self {
            recalled: None,
            candidates: Vec::new(),
            query_time,
            warnings: Vec::new(),
        }
    }
}

fn score_one(
    relevance: Relevance,
    elapsed: f64,
    g: f64,
    importance: u8,
    config: &EngineConfig,
) -> Result<f64, MathError> {
    match config.scorer {
        Scorer::Proposed => memory_math::recall_probability(relevance, elapsed, g, &config.scaling),
        Scorer::Baseline => {
            memory_math::baseline_score(relevance, elapsed, importance as i64, &config.baseline)
        }
    }
}

/// Scores `events` against `query` without mutating anything.
///
/// Output is ordered by score, then creation time, then id.
pub fn score_candidates(
    query: &Embedding,
    events: &[&MemoryEvent],
    now: i64,
    config: &EngineConfig,
) -> Result<Vec<ScoredCandidate>, EngineError> {
    let query_fp = query.fingerprint();
    let mut scored = Vec::with_capacity(events.len());
    for (rank, event) in events.iter().enumerate() {
        let fp = event.embedding.fingerprint();
        if fp != query_fp {
            return Err(StoreError::FingerprintMismatch {
                expected: fp,
                found: query_fp,
            }
            .into());
        }
        let relevance = Relevance::saturating(query.dot(&event.embedding));
        let raw_elapsed = (now - event.created_at) as f64;
        let clamped_future = raw_elapsed < 0.0;
        let elapsed = raw_elapsed.max(0.0);
        let g = event.consolidation.g;
        let importance = event.importance_or_default();
        let score = score_one(relevance, elapsed, g, importance, config)?;
        scored.push(ScoredCandidate {
            event_id: event.id,
            content: event.content.clone(),
            created_at: event.created_at,
            relevance: relevance.value(),
            elapsed_seconds: elapsed,
            clamped_future,
            g,
            n: event.consolidation.n,
            importance,
            score,
            relevance_rank: rank,
        });
    }
    scored.sort_by(candidate_order);
    Ok(scored)
}

fn candidate_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.created_at.cmp(&b.created_at))
        .then(a.event_id.cmp(&b.event_id))
}

/// Index into `candidates` (score-ordered) of the memory to recall, if any.
pub fn select(candidates: &[ScoredCandidate], config: &EngineConfig) -> Option<usize> {
    let passes = |c: &ScoredCandidate| c.score >= config.threshold;
    match config.trigger_policy {
        TriggerPolicy::ArgmaxOnly => (!candidates.is_empty()).then_some(0),
        TriggerPolicy::ArgmaxAndThreshold => candidates.first().filter(|c| passes(c)).map(|_| 0),
        TriggerPolicy::ThresholdOnly => candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| passes(c))
            .min_by_key(|(_, c)| c.relevance_rank)
            .map(|(i, _)| i),
    }
}

/// Reply from one chat turn.
#[derive(Debug, Clone)]
pub struct ChatTurn {
    pub reply: String,
    pub outcome: RecallOutcome,
    pub prompt: PromptBundle,
    pub user_event: EventId,
}

/// Owns a store and an embedder; one recall cycle at a time.
pub struct RecallEngine {
    store: MemoryStore,
    embedder: Box<dyn Embedder>,
    config: EngineConfig,
}

impl RecallEngine {
    pub fn new(
        store: MemoryStore,
        embedder: Box<dyn Embedder>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if let Some(fp) = embedder.fingerprint() {
            store.ensure_fingerprint(&fp)?;
        }
        Ok(Self {
            store,
            embedder,
            config,
        })
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MemoryStore {
        &mut self.store
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn into_store(self) -> MemoryStore {
        self.store
    }

    pub fn add(&mut self, new: NewEvent) -> Result<MemoryEvent, EngineError> {
        Ok(self.store.append_event(self.embedder.as_ref(), new)?)
    }

    /// Scores and selects without touching consolidation state.
    pub fn recall_dry_run(&self, query: &str, now: i64) -> Result<RecallOutcome, EngineError> {
        if self.store.is_empty() {
            return Ok(RecallOutcome::empty(now));
        }
        let embedding = self.embedder.embed(query)?;
        self.store.ensure_fingerprint(&embedding.fingerprint())?;
        let hits = self
            .store
            .index()
            .search(&embedding, self.config.candidate_k)
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        let events: Vec<&MemoryEvent> = hits
            .iter()
            .filter_map(|h| self.store.get(&h.event_id))
            .collect();
        let candidates = score_candidates(&embedding, &events, now, &self.config)?;
        let mut warnings = Vec::new();
        for c in candidates.iter().filter(|c| c.clamped_future) {
            let msg = format!(
                "event {} is dated after the query time; elapsed time clamped to 0",
                c.event_id
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let recalled = select(&candidates, &self.config).map(|i| {
            let c = &candidates[i];
            RecalledMemory {
                event: self
                    .store
                    .get(&c.event_id)
                    .cloned()
                    .expect("candidate exists"),
                score: c.score,
                relevance: c.relevance,
                elapsed_seconds: c.elapsed_seconds,
                g: c.g,
                consolidation_after: None,
            }
        });
        Ok(RecallOutcome {
            recalled,
            candidates,
            query_time: now,
            warnings,
        })
    }

    /// Full recall cycle. At most one memory is recalled and consolidated.
    pub fn recall(&mut self, query: &str, now: i64) -> Result<RecallOutcome, EngineError> {
        let mut outcome = self.recall_dry_run(query, now)?;
        if let Some(recalled) = outcome.recalled.as_mut() {
            let since = recalled
                .event
                .consolidation
                .last_recalled_at
                .unwrap_or(recalled.event.created_at);
            let recall_time = if now < since {
                let msg = format!(
                    "recall of {} at {now} precedes its last update at {since}; recorded at {since}",
                    recalled.event.id
                );
                log::warn!("{msg}");
                outcome.warnings.push(msg);
                since
            } else {
                now
            };
            let state =
                self.store
                    .record_recall(&recalled.event.id, recall_time, &self.config.scaling)?;
            recalled.consolidation_after = Some(state);
            recalled.event.consolidation = state;
        }
        Ok(outcome)
    }

    /// One dialogue turn: recall, build prompts, store the user turn, then
    /// ask the model. Memory side effects are committed before the model is
    /// called, so they survive a model failure.
    pub fn chat_turn(
        &mut self,
        user_text: &str,
        username: &str,
        now: i64,
        client: &dyn ChatClient,
    ) -> Result<ChatTurn, EngineError> {
        let outcome = self.recall(user_text, now)?;
        let prompt = build_prompt(&outcome, username, now)?;
        let user_event = self.add(NewEvent {
            content: user_text.to_string(),
            timestamp: now,
            importance: None,
            tags: Vec::new(),
            source: EventSource::Chat,
        })?;
        let request = ChatRequest {
            system: prompt.combined_system(),
            messages: vec![ChatMessage::user(user_text)],
        };
        let reply = client.complete(&request)?;
        Ok(ChatTurn {
            reply,
            outcome,
            prompt,
            user_event: user_event.id,
        })
    }
}
