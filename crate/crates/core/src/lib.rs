//! Memory recall and consolidation for dialogue agents.
//!
//! Memories are timestamped events. A query recalls at most one of them,
//! chosen by a normalized recall probability that combines cosine relevance,
//! elapsed time, and a per-memory consolidation gradient that grows every
//! time the memory is recalled. A recency/importance/relevance baseline and a
//! benchmark harness with a paired t-test are included for comparison.
//!
//! Module map:
//!
//! - [`memory_math`]: scoring functions, pure.
//! - [`embedding`]: local feature-hashing and remote HTTP embedders.
//! - [`vector_index`]: exact top-k cosine search.
//! - [`memory_store`]: durable event log with snapshots.
//! - [`recall_engine`]: the recall cycle and chat turns; [`prompt`] and
//!   [`llm`] supply prompt templates and model clients.
//! - [`eval_harness`] and [`stats`]: benchmark datasets, losses, t-test.

pub mod embedding;
pub mod eval_harness;
pub mod llm;
pub mod memory_math;
pub mod memory_store;
pub mod prompt;
pub mod recall_engine;
pub mod stats;
pub mod vector_index;

pub use embedding::{Embedder, EmbedderConfig, Embedding, Fingerprint, LocalHashEmbedder};
pub use eval_harness::{Dataset, EvalReport, EvalTask};
pub use llm::{ChatClient, HttpChatClient, ScriptedChatClient};
pub use memory_math::{BaselineWeights, ConsolidationState, Relevance, TimeScaling};
pub use memory_store::{EventId, EventSource, MemoryEvent, MemoryStore, NewEvent};
pub use prompt::PromptBundle;
pub use recall_engine::{EngineConfig, RecallEngine, RecallOutcome, Scorer, TriggerPolicy};
