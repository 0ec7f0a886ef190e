use std::fmt;

use crate::autoencoder::{predict, ModelParams, Variant};
use crate::dataset::{denormalize, RatingMatrix};
use crate::error::{Error, Result};
use crate::neighborhood::{find_neighbors, neighbor_histogram, ExplainabilityMatrix};

/// Why an item would be recommended: the model's prediction next to the
/// neighbor ratings behind the explainability score.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub user_id: u32,
    pub item_id: u32,
    /// Prediction on the 1-5 scale, clipped.
    pub predicted_rating: f64,
    /// The user's own training rating of the item, if any.
    pub training_rating: Option<u8>,
    /// `E[u, i]` on the normalized scale.
    pub score: f64,
    pub neighborhood_size: usize,
    /// Neighbors that rated the item.
    pub rated_by: usize,
    /// `histogram[x - 1]` counts neighbors who gave rating `x`.
    pub histogram: [usize; 5],
    pub explainable: bool,
}

/// Builds the explanation for external ids `user_id` and `item_id`.
///
/// The neighborhood is recomputed from `train` with `explain`'s
/// neighborhood size, so the histogram backs the stored score exactly.
pub fn explain_recommendation(
    user_id: u32,
    item_id: u32,
    train: &RatingMatrix,
    explain: &ExplainabilityMatrix,
    params: &ModelParams,
) -> Result<Explanation> {
    let u = train.users().index_of(user_id).ok_or(Error::UnknownId {
        kind: "user",
        id: user_id,
    })?;
    let i = train.items().index_of(item_id).ok_or(Error::UnknownId {
        kind: "item",
        id: item_id,
    })?;
    let neighbors = find_neighbors(train, u, explain.neighborhood_size())?;
    let histogram = neighbor_histogram(train, &neighbors, i)?;

    let row = train.user_vector(u)?.values;
    let e_row = (params.variant == Variant::Explainable).then(|| explain.row(u));
    let predicted = predict(params, &row, e_row.as_deref())?;
    let score = explain.get(u, i);
    Ok(Explanation {
        user_id,
        item_id,
        predicted_rating: denormalize(predicted[i]).clamp(1.0, 5.0),
        training_rating: train.raw_rating(u, i),
        score,
        neighborhood_size: neighbors.len(),
        rated_by: histogram.iter().sum(),
        histogram,
        explainable: score > 0.0,
    })
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "user {} item {}", self.user_id, self.item_id)?;
        writeln!(f, "predicted rating: {:.3}", self.predicted_rating)?;
        if let Some(r) = self.training_rating {
            writeln!(f, "already rated: {r}")?;
        }
        writeln!(
            f,
            "{} of {} neighbors rated this item",
            self.rated_by, self.neighborhood_size
        )?;
        for (x, count) in self.histogram.iter().enumerate().rev() {
            if *count > 0 {
                writeln!(f, "  rating {}: {count}", x + 1)?;
            }
        }
        if self.explainable {
            write!(f, "explainability score: {:.4} (explainable)", self.score)
        } else {
            write!(f, "explainability score: 0 (not explainable)")
        }
    }
}
