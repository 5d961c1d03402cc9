//! Scoring mathematics for memory recall.
//!
//! The proposed model scores a memory by
//!
//! ```text
//! p_n(t) = (1 - exp(-r * exp(-t / g))) / (1 - exp(-1))
//! ```
//!
//! where `r` is the cosine relevance between query and memory, `t` the elapsed
//! time in decay units, and `g` the consolidation gradient. The gradient starts
//! at 1 and grows by `S(t) = (1 - e^-t) / (1 + e^-t)` on every recall, `t` being
//! the inter-recall interval in consolidation units. The decay rate of the
//! underlying forgetting curve is `1 / g`, so a memory recalled over long
//! intervals decays more slowly. The stimulus threshold of the Poisson recall
//! model is fixed at one; memory strength is replaced by relevance.
//!
//! Everything here is pure and `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds per year; the default decay unit.
pub const SECONDS_PER_YEAR: f64 = 31_536_000.0;
/// Seconds per day; the default consolidation unit.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vectors must have at least one component")]
    EmptyVector,
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("recall at {recall_time} precedes previous recall at {last}")]
    ClockRegression { recall_time: i64, last: i64 },
    #[error("importance {0} outside 1..=10")]
    ImportanceOutOfRange(i64),
    #[error("cannot normalize an empty list")]
    EmptyInput,
}

/// Cosine similarity between a query and a memory, in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Relevance(f64);

impl Relevance {
    pub fn new(value: f64) -> Result<Self, MathError> {
        if value.is_finite() && (-1.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(MathError::InvalidArgument(format!(
                "relevance {value} outside [-1, 1]"
            )))
        }
    }

    /// Clamps into `[-1, 1]`; NaN becomes 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Relevance used for scoring: negative similarity counts as unrelated.
    pub fn floored(self) -> f64 {
        self.0.max(0.0)
    }
}

/// Converts wall-clock seconds into the unitless time of the two model terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScaling {
    /// Seconds per unit of elapsed time in the recall probability.
    pub decay_unit_seconds: f64,
    /// Seconds per unit of inter-recall time in the consolidation increment.
    pub consolidation_unit_seconds: f64,
}

impl Default for TimeScaling {
    fn default() -> Self {
        Self {
            decay_unit_seconds: SECONDS_PER_YEAR,
            consolidation_unit_seconds: SECONDS_PER_DAY,
        }
    }
}

impl TimeScaling {
    pub fn new(
        decay_unit_seconds: f64,
        consolidation_unit_seconds: f64,
    ) -> Result<Self, MathError> {
        let scaling = Self {
            decay_unit_seconds,
            consolidation_unit_seconds,
        };
        scaling.validate()?;
        Ok(scaling)
    }

    pub fn validate(&self) -> Result<(), MathError> {
        for (name, v) in [
            ("decay unit", self.decay_unit_seconds),
            ("consolidation unit", self.consolidation_unit_seconds),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MathError::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-memory consolidation: recall count, gradient and the last recall time.
///
/// `g` starts at 1 and every recall adds an increment below 1, so
/// `1 <= g <= 1 + n`. The decay rate of the forgetting curve is `1 / g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationState {
    pub n: u64,
    pub g: f64,
    pub last_recalled_at: Option<i64>,
}

impl Default for ConsolidationState {
    fn default() -> Self {
        Self::fresh()
    }
}

impl ConsolidationState {
    /// State of a memory that has never been recalled.
    pub fn fresh() -> Self {
        Self {
            n: 0,
            g: 1.0,
            last_recalled_at: None,
        }
    }

    /// Decay rate `a = 1 / g`.
    pub fn decay_rate(&self) -> f64 {
        1.0 / self.g
    }

    pub fn validate(&self) -> Result<(), MathError> {
        if !(self.g.is_finite() && self.g >= 1.0) {
            return Err(MathError::InvalidArgument(format!(
                "gradient {} must be >= 1",
                self.g
            )));
        }
        if self.g > 1.0 + self.n as f64 + 1e-9 {
            return Err(MathError::InvalidArgument(format!(
                "gradient {} exceeds 1 + n = {}",
                self.g,
                1 + self.n
            )));
        }
        if (self.n == 0) != self.last_recalled_at.is_none() {
            return Err(MathError::InvalidArgument(
                "last recall time must be present exactly when n > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Weights and constants of the recency/importance/relevance baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineWeights {
    pub w_recency: f64,
    pub w_importance: f64,
    pub w_relevance: f64,
    /// Recency multiplier per elapsed hour, in `(0, 1)`.
    pub recency_decay_per_hour: f64,
    /// Importance is divided by this before weighting.
    pub importance_scale: f64,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        Self {
            w_recency: 1.0,
            w_importance: 1.0,
            w_relevance: 1.0,
            recency_decay_per_hour: 0.995,
            importance_scale: 10.0,
        }
    }
}

impl BaselineWeights {
    pub fn validate(&self) -> Result<(), MathError> {
        let weights = [self.w_recency, self.w_importance, self.w_relevance];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MathError::InvalidArgument(
                "baseline weights must be non-negative".into(),
            ));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(MathError::InvalidArgument(
                "at least one baseline weight must be positive".into(),
            ));
        }
        if !(self.recency_decay_per_hour > 0.0 && self.recency_decay_per_hour < 1.0) {
            return Err(MathError::InvalidArgument(format!(
                "recency decay {} outside (0, 1)",
                self.recency_decay_per_hour
            )));
        }
        if !(self.importance_scale.is_finite() && self.importance_scale > 0.0) {
            return Err(MathError::InvalidArgument(
                "importance scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Relevance, MathError> {
    if a.len() != b.len() {
        return Err(MathError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MathError::EmptyVector);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MathError::ZeroNorm);
    }
    Ok(Relevance::saturating(dot / (na.sqrt() * nb.sqrt())))
}

/// Normalized recall probability of a memory.
///
/// Negative relevance is floored to 0. Equals 1 exactly at `r = 1, t = 0`.
pub fn recall_probability(
    relevance: Relevance,
    elapsed_seconds: f64,
    g: f64,
    scaling: &TimeScaling,
) -> Result<f64, MathError> {
    if !(elapsed_seconds.is_finite() && elapsed_seconds >= 0.0) {
        return Err(MathError::InvalidArgument(format!(
            "elapsed time {elapsed_seconds} must be non-negative"
        )));
    }
    if !(g.is_finite() && g >= 1.0) {
        return Err(MathError::InvalidArgument(format!(
            "gradient {g} must be >= 1"
        )));
    }
    scaling.validate()?;
    let r = relevance.floored();
    let t = elapsed_seconds / scaling.decay_unit_seconds;
    let numerator = -(-r * (-t / g).exp()).exp_m1();
    let denominator = -(-1.0f64).exp_m1();
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Sigmoid consolidation increment `S(t)`, in `[0, 1)`.
pub fn consolidation_increment(inter_recall_seconds: f64, scaling: &TimeScaling) -> f64 {
    let t = (inter_recall_seconds / scaling.consolidation_unit_seconds).max(0.0);
    // (1 - e^-t) / (1 + e^-t) == tanh(t / 2)
    (t / 2.0).tanh()
}

/// Applies one recall at `recall_time` to `state`.
///
/// The interval is measured from the previous recall, or from `created_at`
/// for the first recall.
pub fn update_gradient(
    state: &ConsolidationState,
    created_at: i64,
    recall_time: i64,
    scaling: &TimeScaling,
) -> Result<ConsolidationState, MathError> {
    let since = state.last_recalled_at.unwrap_or(created_at);
    if recall_time < since {
        return Err(MathError::ClockRegression {
            recall_time,
            last: since,
        });
    }
    let increment = consolidation_increment((recall_time - since) as f64, scaling);
    Ok(ConsolidationState {
        n: state.n + 1,
        g: state.g + increment,
        last_recalled_at: Some(recall_time),
    })
}

/// Weighted sum of relevance, scaled importance and hourly-decayed recency.
pub fn baseline_score(
    relevance: Relevance,
    elapsed_seconds: f64,
    importance: i64,
    weights: &BaselineWeights,
) -> Result<f64, MathError> {
    if !(1..=10).contains(&importance) {
        return Err(MathError::ImportanceOutOfRange(importance));
    }
    let hours = elapsed_seconds.max(0.0) / 3600.0;
    let recency = weights.recency_decay_per_hour.powf(hours);
    Ok(weights.w_relevance * relevance.value()
        + weights.w_importance * (importance as f64 / weights.importance_scale)
        + weights.w_recency * recency)
}

/// Affine rescale to `[0, 1]`. A constant list maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>, MathError> {
    if values.is_empty() {
        return Err(MathError::EmptyInput);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / span).collect())
}

/// Baseline scores across a candidate set with each component min-max scaled
/// before weighting. Not the default baseline; see [`baseline_score`].
pub fn baseline_scores_min_max(
    items: &[(Relevance, f64, i64)],
    weights: &BaselineWeights,
) -> Result<Vec<f64>, MathError> {
    if items.is_empty() {
        return Err(MathError::EmptyInput);
    }
    let mut relevance = Vec::with_capacity(items.len());
    let mut importance = Vec::with_capacity(items.len());
    let mut recency = Vec::with_capacity(items.len());
    for &(r, elapsed, imp) in items {
        if !(1..=10).contains(&imp) {
            return Err(MathError::ImportanceOutOfRange(imp));
        }
        relevance.push(r.value());
        importance.push(imp as f64);
        recency.push(
            weights
                .recency_decay_per_hour
                .powf(elapsed.max(0.0) / 3600.0),
        );
    }
    let (relevance, importance, recency) = (
        min_max_normalize(&relevance)?,
        min_max_normalize(&importance)?,
        min_max_normalize(&recency)?,
    );
    Ok((0..items.len())
        .map(|i| {
            weights.w_relevance * relevance[i]
                + weights.w_importance * importance[i]
                + weights.w_recency * recency[i]
        })
        .collect())
}
