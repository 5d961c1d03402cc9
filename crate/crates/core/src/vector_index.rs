//! Exact top-k cosine search over event embeddings.
//!
//! A linear scan over unit vectors. Results are ordered by similarity
//! (descending), then creation time (older first), then id.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::embedding::Embedding;
use crate::memory_math::Relevance;
use crate::memory_store::EventId;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("event {0} already indexed")]
    Duplicate(EventId),
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("event {0} not in index")]
    UnknownId(EventId),
    #[error("index is empty")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub event_id: EventId,
    pub embedding: Embedding,
    /// Creation time, used to break similarity ties.
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub event_id: EventId,
    pub relevance: Relevance,
}

#[derive(Debug, Default, Clone)]
pub struct VectorIndex {
    dimension: Option<usize>,
    entries: Vec<IndexEntry>,
    positions: HashMap<EventId, usize>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dimension(dimension: usize) -> Self {
        Self {
            dimension: Some(dimension),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.positions.contains_key(id)
    }

    pub fn get(&self, id: &EventId) -> Option<&IndexEntry> {
        self.positions.get(id).map(|&i| &self.entries[i])
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        let dim = entry.embedding.dimension();
        match self.dimension {
            Some(expected) if expected != dim => {
                return Err(IndexError::DimensionMismatch { expected, got: dim })
            }
            _ => {}
        }
        if self.positions.contains_key(&entry.event_id) {
            return Err(IndexError::Duplicate(entry.event_id));
        }
        self.dimension = Some(dim);
        self.positions.insert(entry.event_id, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn remove(&mut self, id: &EventId) -> Result<IndexEntry, IndexError> {
        let pos = self
            .positions
            .remove(id)
            .ok_or(IndexError::UnknownId(*id))?;
        let removed = self.entries.swap_remove(pos);
        if let Some(moved) = self.entries.get(pos) {
            self.positions.insert(moved.event_id, pos);
        }
        Ok(removed)
    }

    /// The `min(k, len)` most similar entries.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        if let Some(expected) = self.dimension {
            if query.dimension() != expected {
                return Err(IndexError::DimensionMismatch {
                    expected,
                    got: query.dimension(),
                });
            }
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (Relevance::saturating(query.dot(&e.embedding)).value(), e))
            .collect();
        let order = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then(a.1.created_at.cmp(&b.1.created_at))
                .then(a.1.event_id.cmp(&b.1.event_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(sim, e)| SearchHit {
                event_id: e.event_id,
                relevance: Relevance::saturating(sim),
            })
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter()
    }
}
