//! Output views. JSON output serializes these directly; text output is
//! rendered from the same values.

use std::fmt::Write as _;

use recollect_core::memory_store::iso8601;
use recollect_core::recall_engine::{RecalledMemory, ScoredCandidate};
use recollect_core::{ConsolidationState, EngineConfig, MemoryEvent, RecallOutcome};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct EventView {
    pub id: String,
    pub content: String,
    pub created_at: i64,
    pub created_at_iso: String,
    pub n: u64,
    pub g: f64,
    pub last_recalled_at: Option<i64>,
    pub importance: Option<u8>,
    pub tags: Vec<String>,
    pub source: String,
}

impl From<&MemoryEvent> for EventView {
    fn from(e: &MemoryEvent) -> Self {
        Self {
            id: e.id.to_string(),
            content: e.content.clone(),
            created_at: e.created_at,
            created_at_iso: iso8601(e.created_at),
            n: e.consolidation.n,
            g: e.consolidation.g,
            last_recalled_at: e.consolidation.last_recalled_at,
            importance: e.importance,
            tags: e.tags.clone(),
            source: serde_json::to_value(e.source)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RecalledView {
    pub id: String,
    pub content: String,
    pub created_at_iso: String,
    pub score: f64,
    pub relevance: f64,
    pub elapsed_seconds: f64,
    pub g: f64,
    pub consolidation_after: Option<ConsolidationState>,
}

impl From<&RecalledMemory> for RecalledView {
    fn from(r: &RecalledMemory) -> Self {
        Self {
            id: r.event.id.to_string(),
            content: r.event.content.clone(),
            created_at_iso: iso8601(r.event.created_at),
            score: r.score,
            relevance: r.relevance,
            elapsed_seconds: r.elapsed_seconds,
            g: r.g,
            consolidation_after: r.consolidation_after,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CandidateView {
    pub id: String,
    pub content: String,
    pub relevance: f64,
    pub elapsed_seconds: f64,
    pub clamped_future: bool,
    pub g: f64,
    pub importance: u8,
    pub score: f64,
}

impl From<&ScoredCandidate> for CandidateView {
    fn from(c: &ScoredCandidate) -> Self {
        Self {
            id: c.event_id.to_string(),
            content: c.content.clone(),
            relevance: c.relevance,
            elapsed_seconds: c.elapsed_seconds,
            clamped_future: c.clamped_future,
            g: c.g,
            importance: c.importance,
            score: c.score,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RecallView {
    pub query_time: i64,
    pub query_time_iso: String,
    pub dry_run: bool,
    pub recalled: Option<RecalledView>,
    pub candidates: Vec<CandidateView>,
    pub warnings: Vec<String>,
}

impl RecallView {
    pub fn new(outcome: &RecallOutcome, dry_run: bool) -> Self {
        Self {
            query_time: outcome.query_time,
            query_time_iso: iso8601(outcome.query_time),
            dry_run,
            recalled: outcome.recalled.as_ref().map(RecalledView::from),
            candidates: outcome.candidates.iter().map(CandidateView::from).collect(),
            warnings: outcome.warnings.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReplayedEvent {
    pub label: String,
    pub id: String,
}

#[derive(Debug, Serialize)]
pub struct ReplayView {
    pub task_id: String,
    pub query: String,
    pub query_time: i64,
    pub query_time_iso: String,
    pub events: Vec<ReplayedEvent>,
}

#[derive(Debug, Serialize)]
pub struct TurnView {
    pub time: String,
    pub user: String,
    pub reply: Option<String>,
    pub error: Option<String>,
    pub recalled: Option<RecalledView>,
}

fn truncate(s: &str, width: usize) -> String {
    if s.chars().count() <= width {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(width.saturating_sub(1)).collect();
        out.push('…');
        out
    }
}

pub fn added(e: &EventView) -> String {
    format!("added {}  g = {:.3}  n = {}\n", e.id, e.g, e.n)
}

pub fn list(events: &[EventView]) -> String {
    if events.is_empty() {
        return "store is empty\n".into();
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<36}  {:<20}  {:>3}  {:>7}  {:>3}  content",
        "id", "created", "n", "g", "imp"
    );
    for e in events {
        let _ = writeln!(
            out,
            "{:<36}  {:<20}  {:>3}  {:>7.3}  {:>3}  {}",
            e.id,
            e.created_at_iso,
            e.n,
            e.g,
            e.importance.map_or("-".into(), |i| i.to_string()),
            truncate(&e.content, 60)
        );
    }
    out
}

pub fn recall(view: &RecallView, config: &EngineConfig, explain: bool) -> String {
    let mut out = String::new();
    match &view.recalled {
        Some(r) => {
            let _ = writeln!(out, "recalled: {} ({})", r.content, r.created_at_iso);
            let _ = write!(
                out,
                "  score {:.3}  relevance {:.3}  time {:.0} s  grad {:.3}",
                r.score, r.relevance, r.elapsed_seconds, r.g
            );
            match r.consolidation_after {
                Some(s) => {
                    let _ = writeln!(out, "  ->  grad {:.3}, n = {}", s.g, s.n);
                }
                None => {
                    let _ = writeln!(out, "  (dry run, not consolidated)");
                }
            }
        }
        None => {
            let _ = writeln!(out, "no recall");
        }
    }
    if explain {
        let _ = writeln!(
            out,
            "\nthreshold {}  policy {}  scorer {}",
            config.threshold,
            serde_json::to_value(config.trigger_policy)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            serde_json::to_value(config.scorer)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
        );
        let _ = writeln!(
            out,
            "  {:<40} {:>9} {:>10} {:>7} {:>7}",
            "event", "relevance", "time (s)", "grad", "score"
        );
        for c in &view.candidates {
            let marker = if view.recalled.as_ref().is_some_and(|r| r.id == c.id) {
                "*"
            } else {
                " "
            };
            let _ = writeln!(
                out,
                "{marker} {:<40} {:>9.3} {:>10.0} {:>7.3} {:>7.3}{}",
                truncate(&c.content, 40),
                c.relevance,
                c.elapsed_seconds,
                c.g,
                c.score,
                if c.clamped_future {
                    "  (future-dated)"
                } else {
                    ""
                }
            );
        }
    }
    out
}

pub fn replay(view: &ReplayView) -> String {
    let mut out = format!(
        "imported {} events of {}; recall with:\n  recollect recall {:?} --now {}\n",
        view.events.len(),
        view.task_id,
        view.query,
        view.query_time
    );
    for e in &view.events {
        let _ = writeln!(out, "  {}  {}", e.label, e.id);
    }
    out
}

pub fn turn(t: &TurnView, explain: bool) -> String {
    let mut out = format!("[{}] you: {}\n", t.time, t.user);
    if explain {
        match &t.recalled {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "  recalled: {} ({}, score {:.3})",
                    r.content, r.created_at_iso, r.score
                );
            }
            None => out.push_str("  recalled: none\n"),
        }
    }
    match (&t.reply, &t.error) {
        (Some(reply), _) => {
            let _ = writeln!(out, "agent: {reply}");
        }
        (None, Some(err)) => {
            let _ = writeln!(out, "agent unavailable: {err}");
        }
        (None, None) => {}
    }
    out
}
