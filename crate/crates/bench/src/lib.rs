//! Fixtures shared by the benchmarks in `benches/`.

use recollect_core::embedding::embed_local;
use recollect_core::vector_index::{IndexEntry, VectorIndex};
use recollect_core::{Embedding, EventId};

const TOPICS: &[&str] = &[
    "coffee", "concert", "office", "pasta", "guitar", "hike", "sister", "rain", "library", "train",
    "garden", "ramen", "movie", "beach", "exam",
];

/// Deterministic pseudo-sentence number `i`.
pub fn sentence(i: usize) -> String {
    let a = TOPICS[i % TOPICS.len()];
    let b = TOPICS[(i / TOPICS.len() + 3 * i) % TOPICS.len()];
    format!("user talked about {a} and {b} on day {}", i % 365)
}

pub fn embedding(i: usize, dimension: usize) -> Embedding {
    embed_local(&sentence(i), dimension).expect("sentences always have features")
}

/// An index holding `n` hashed sentence embeddings.
pub fn index(n: usize, dimension: usize) -> VectorIndex {
    let mut index = VectorIndex::with_dimension(dimension);
    for i in 0..n {
        index
            .insert(IndexEntry {
                event_id: EventId::from_u128(i as u128 + 1),
                embedding: embedding(i, dimension),
                created_at: i as i64,
            })
            .expect("ids are unique");
    }
    index
}
