//! Rating accuracy and top-n ranking metrics.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;

use crate::dataset::{denormalize, RatingMatrix, TestRating, MAX_RATING, MIN_RATING, RATING_SCALE};
use crate::error::{Error, Result};
use crate::neighborhood::ExplainabilityMatrix;

/// Test ratings at or above this raw value count as relevant for MAP.
pub const DEFAULT_RELEVANCE_THRESHOLD: u8 = 4;

fn clip_raw(v: f64) -> f64 {
    v.clamp(MIN_RATING as f64, MAX_RATING as f64)
}

/// Root mean squared error on the raw 1-5 scale. `predict_raw(user, item)`
/// returns a raw-scale prediction, which is clipped to `[1, 5]`.
pub fn rmse<F>(test: &[TestRating], mut predict_raw: F) -> Result<f64>
where
    F: FnMut(usize, usize) -> f64,
{
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let sse: f64 = test
        .iter()
        .map(|t| {
            let d = t.rating as f64 - clip_raw(predict_raw(t.user, t.item));
            d * d
        })
        .sum();
    Ok((sse / test.len() as f64).sqrt())
}

/// RMSE from a normalized-scale prediction matrix.
pub fn rmse_from_matrix(predictions: &Array2<f64>, test: &[TestRating]) -> Result<f64> {
    rmse(test, |u, i| denormalize(predictions[[u, i]]))
}

/// The raw-scale RMSE expressed on the normalized scale.
pub fn rmse_normalized_from_matrix(predictions: &Array2<f64>, test: &[TestRating]) -> Result<f64> {
    Ok(rmse_from_matrix(predictions, test)? / RATING_SCALE)
}

/// RMSE of predicting the training-set mean rating everywhere.
pub fn global_mean_rmse(train: &RatingMatrix, test: &[TestRating]) -> Result<f64> {
    let mean = train
        .global_mean_raw()
        .ok_or_else(|| Error::Config("training matrix is empty".into()))?;
    rmse(test, |_, _| mean)
}

/// A user's recommendation list.
#[derive(Clone, Debug, PartialEq)]
pub struct TopNList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl TopNList {
    /// The first `n_top` entries.
    pub fn truncated(&self, n_top: usize) -> &[usize] {
        &self.items[..self.items.len().min(n_top)]
    }
}

/// The `n_top` highest-scored items the user has not rated, ties broken by
/// ascending item index.
pub fn top_n(user: usize, predictions: &[f64], rated: &[bool], n_top: usize) -> Result<TopNList> {
    if n_top == 0 {
        return Err(Error::Config("n_top must be at least 1".into()));
    }
    if predictions.len() != rated.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} mask entries",
            predictions.len(),
            rated.len()
        )));
    }
    let mut candidates: Vec<(usize, f64)> = predictions
        .iter()
        .zip(rated)
        .enumerate()
        .filter(|(_, (_, &r))| !r)
        .map(|(i, (&s, _))| (i, s))
        .collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if candidates.len() > n_top {
        candidates.select_nth_unstable_by(n_top - 1, by_rank);
        candidates.truncate(n_top);
    }
    candidates.sort_by(by_rank);
    Ok(TopNList {
        user,
        items: candidates.iter().map(|c| c.0).collect(),
        scores: candidates.iter().map(|c| c.1).collect(),
    })
}

/// Top-n lists for `users` from a full prediction matrix, excluding each
/// user's training items.
pub fn top_n_lists(
    predictions: &Array2<f64>,
    train: &RatingMatrix,
    users: &[usize],
    n_top: usize,
) -> Result<Vec<TopNList>> {
    let mut rated = vec![false; train.num_items()];
    users
        .iter()
        .map(|&u| {
            train.check_user(u)?;
            rated.iter_mut().for_each(|r| *r = false);
            for &i in train.row(u).0 {
                rated[i] = true;
            }
            let row = predictions.row(u);
            top_n(u, row.as_slice().unwrap(), &rated, n_top)
        })
        .collect()
}

/// Mean explainability precision: the average fraction of each list's first
/// `n_top` items with `E[u, i] > 0`. Empty lists are skipped.
pub fn mep_at_n(lists: &[TopNList], explain: &ExplainabilityMatrix, n_top: usize) -> f64 {
    let (sum, count) = lists
        .iter()
        .filter_map(|list| {
            let rec = list.truncated(n_top);
            if rec.is_empty() {
                return None;
            }
            let hits = rec.iter().filter(|&&i| explain.is_explainable(list.user, i)).count();
            Some(hits as f64 / rec.len() as f64)
        })
        .fold((0.0, 0usize), |(s, c), p| (s + p, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Relevant held-out items per user.
pub fn relevant_items(test: &[TestRating], relevance_threshold: u8) -> BTreeMap<usize, HashSet<usize>> {
    let mut out: BTreeMap<usize, HashSet<usize>> = BTreeMap::new();
    for t in test.iter().filter(|t| t.rating >= relevance_threshold) {
        out.entry(t.user).or_default().insert(t.item);
    }
    out
}

/// Average precision of one ranked list against a relevant set, normalized by
/// `min(|relevant|, n_top)`.
pub fn average_precision(ranked: &[usize], relevant: &HashSet<usize>, n_top: usize) -> f64 {
    let denom = relevant.len().min(n_top);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (pos, item) in ranked.iter().take(n_top).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            total += hits as f64 / (pos + 1) as f64;
        }
    }
    total / denom as f64
}

/// Mean average precision at `n_top`. Users without relevant test items are
/// left out of the mean.
pub fn map_at_n(lists: &[TopNList], test: &[TestRating], n_top: usize, relevance_threshold: u8) -> Result<f64> {
    if !(MIN_RATING..=MAX_RATING).contains(&relevance_threshold) {
        return Err(Error::Config(format!(
            "relevance threshold must lie in 1..=5, got {relevance_threshold}"
        )));
    }
    let relevant = relevant_items(test, relevance_threshold);
    let (sum, count) = lists
        .iter()
        .filter_map(|list| {
            relevant
                .get(&list.user)
                .map(|rel| average_precision(list.truncated(n_top), rel, n_top))
        })
        .fold((0.0, 0usize), |(s, c), ap| (s + ap, c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Users that appear in the test fold, ascending.
pub fn test_users(test: &[TestRating]) -> Vec<usize> {
    let mut users: Vec<usize> = test.iter().map(|t| t.user).collect();
    users.dedup();
    users.sort_unstable();
    users.dedup();
    users
}
