//! The black-box query surface of a target recommender.
//!
//! This is everything an auditor is allowed to see: submit a user's
//! attributes (and optionally an interaction history) and receive a ranked
//! top-n list.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct Query<'a, T> {
    /// Raw interaction history as item ids; `None` is a cold-start query.
    pub history: Option<&'a [usize]>,
    /// Encoded user attribute row.
    pub attributes: &'a [T],
    pub n: usize,
    pub exclude_history: bool,
}

impl<'a, T> Query<'a, T> {
    pub fn with_history(history: &'a [usize], attributes: &'a [T], n: usize) -> Self {
        Self {
            history: Some(history),
            attributes,
            n,
            exclude_history: false,
        }
    }

    pub fn attributes_only(attributes: &'a [T], n: usize) -> Self {
        Self {
            history: None,
            attributes,
            n,
            exclude_history: false,
        }
    }
}

/// Ranked recommendation list. Scores are non-increasing; ties are broken by
/// ascending item id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RecommendationList<T> {
    item_ids: Vec<usize>,
    scores: Vec<T>,
}

impl<T: Scalar> RecommendationList<T> {
    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// Selects the `n` best-scoring items, skipping `excluded` (sorted or not).
pub fn top_n<T: Scalar>(scores: &[T], n: usize, excluded: &[usize]) -> Result<RecommendationList<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut skip = vec![false; scores.len()];
    for &i in excluded {
        if let Some(s) = skip.get_mut(i) {
            *s = true;
        }
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !skip[i]).collect();
    if candidates.len() < n {
        return Err(Error::NotEnoughItems {
            requested: n,
            available: candidates.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("recommendation scores"));
    }
    let order = |a: &usize, b: &usize| -> Ordering {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if n < candidates.len() {
        candidates.select_nth_unstable_by(n - 1, order);
        candidates.truncate(n);
    }
    candidates.sort_by(order);
    let scores = candidates.iter().map(|&i| scores[i]).collect();
    Ok(RecommendationList {
        item_ids: candidates,
        scores,
    })
}

/// A recommender reachable only through top-n queries.
pub trait Recommender<T: Scalar>: Sync {
    fn recommend(&self, query: &Query<'_, T>) -> Result<RecommendationList<T>>;

    /// Size of the item universe the recommender ranks over.
    fn num_items(&self) -> usize;
}

impl<T: Scalar, R: Recommender<T> + ?Sized> Recommender<T> for &R {
    fn recommend(&self, query: &Query<'_, T>) -> Result<RecommendationList<T>> {
        (**self).recommend(query)
    }

    fn num_items(&self) -> usize {
        (**self).num_items()
    }
}

/// Wraps a recommender and counts the queries issued through it.
pub struct CountingRecommender<R> {
    inner: R,
    count: AtomicUsize,
}

impl<R> CountingRecommender<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn queries(&self) -> usize {
        self.count.load(AtomicOrdering::Relaxed)
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}

impl<T: Scalar, R: Recommender<T>> Recommender<T> for CountingRecommender<R> {
    fn recommend(&self, query: &Query<'_, T>) -> Result<RecommendationList<T>> {
        self.count.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.recommend(query)
    }

    fn num_items(&self) -> usize {
        self.inner.num_items()
    }
}
