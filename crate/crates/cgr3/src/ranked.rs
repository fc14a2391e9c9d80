//! Ranked entity lists, the currency between the embedding model, the LLM
//! stages and evaluation.

use serde::{Deserialize, Serialize};

use crate::graph::EntityId;

/// Strictly ordered entity list with scores, best first.
///
/// Ties in score are broken lexicographically by entity id so that every
/// ranking is deterministic and replayable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<(EntityId, f64)>,
}

impl RankedList {
    /// Sorts `scores` descending (ties -> lexicographic id) into a ranking.
    pub fn from_scores(mut scores: Vec<(EntityId, f64)>) -> Self {
        scores.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        RankedList { entries: scores }
    }

    /// Wraps an already-ordered list, assigning descending positional scores.
    pub fn from_order(ids: Vec<EntityId>) -> Self {
        let n = ids.len();
        RankedList {
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, e)| (e, (n - i) as f64))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(EntityId, f64)] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &EntityId> {
        self.entries.iter().map(|(e, _)| e)
    }

    /// 1-based position of `e`, if present.
    pub fn position(&self, e: &EntityId) -> Option<usize> {
        self.entries.iter().position(|(x, _)| x == e).map(|p| p + 1)
    }

    pub fn top(&self, n: usize) -> impl Iterator<Item = &EntityId> {
        self.entries.iter().take(n).map(|(e, _)| e)
    }
}
