//! Rating-file ingestion, the sparse user×item rating matrix and the
//! train/test holdout split.
//!
//! Ratings are stored on a normalized scale `raw / 5`, so every observed entry
//! lies in `(0, 1]` and `0` is free to mean "unobserved" in dense vectors.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top of the rating scale. Normalized values are `raw / RATING_SCALE`.
pub const RATING_SCALE: f64 = 5.0;
pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 5;

/// One line of a MovieLens-style rating file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawRating {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp` (MovieLens `u.data`).
    #[default]
    Tab,
    /// `user,item,rating,timestamp`; a leading header line is skipped.
    Csv,
}

impl InputFormat {
    fn separator(self) -> char {
        match self {
            InputFormat::Tab => '\t',
            InputFormat::Csv => ',',
        }
    }
}

/// Parses a tab-separated MovieLens `u.data` file.
pub fn parse_movielens(path: impl AsRef<Path>) -> Result<Vec<RawRating>> {
    parse_ratings_file(path, InputFormat::Tab)
}

pub fn parse_ratings_file(path: impl AsRef<Path>, format: InputFormat) -> Result<Vec<RawRating>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(BufReader::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses ratings from any reader. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_ratings<R: BufRead>(reader: R, format: InputFormat) -> Result<Vec<RawRating>> {
    let sep = format.separator();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        if format == InputFormat::Csv && line_no == 1 && fields[0].parse::<u32>().is_err() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let field = |pos: usize, name: &str| -> Result<i64> {
            fields[pos].parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid {name} {:?}", fields[pos]),
            })
        };
        let user_id = field(0, "user id")?;
        let item_id = field(1, "item id")?;
        let rating = field(2, "rating")?;
        let timestamp = field(3, "timestamp")?;
        let to_id = |v: i64, name: &str| -> Result<u32> {
            u32::try_from(v).map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{name} {v} is not a non-negative 32-bit integer"),
            })
        };
        if !(MIN_RATING as i64..=MAX_RATING as i64).contains(&rating) {
            return Err(Error::Parse {
                line: line_no,
                message: Error::RatingOutOfRange(rating).to_string(),
            });
        }
        out.push(RawRating {
            user_id: to_id(user_id, "user id")?,
            item_id: to_id(item_id, "item id")?,
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(out)
}

/// Maps a raw 1..=5 rating to `raw / 5`.
pub fn normalize(raw: i64) -> Result<f64> {
    if !(MIN_RATING as i64..=MAX_RATING as i64).contains(&raw) {
        return Err(Error::RatingOutOfRange(raw));
    }
    Ok(raw as f64 / RATING_SCALE)
}

pub fn denormalize(value: f64) -> f64 {
    value * RATING_SCALE
}

/// Bijection between external ids and dense indices. Indices follow ascending
/// external id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl IdMap {
    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        IdMap { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<u32> {
        self.ids.get(index).copied()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// A user's row materialized densely: normalized ratings with 0 at
/// unobserved positions, plus the observed mask.
#[derive(Clone, Debug, PartialEq)]
pub struct UserVector {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Sparse user×item rating matrix in compressed-row layout. Rows are sorted
/// by item index.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingMatrix {
    users: IdMap,
    items: IdMap,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl RatingMatrix {
    /// Builds a matrix from `(user_index, item_index, raw_rating)` triples.
    pub fn from_entries(
        users: IdMap,
        items: IdMap,
        mut entries: Vec<(usize, usize, u8)>,
    ) -> Result<Self> {
        let (m, n) = (users.len(), items.len());
        for &(u, i, r) in &entries {
            if u >= m {
                return Err(Error::IndexOutOfRange { kind: "user", index: u, size: m });
            }
            if i >= n {
                return Err(Error::IndexOutOfRange { kind: "item", index: i, size: n });
            }
            normalize(r as i64)?;
        }
        entries.sort_unstable_by_key(|&(u, i, _)| (u, i));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::DuplicateRating {
                user_id: users.ids[w[0].0],
                item_id: items.ids[w[0].1],
            });
        }
        let mut row_ptr = vec![0usize; m + 1];
        for &(u, _, _) in &entries {
            row_ptr[u + 1] += 1;
        }
        for u in 0..m {
            row_ptr[u + 1] += row_ptr[u];
        }
        let cols = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2 as f64 / RATING_SCALE).collect();
        Ok(RatingMatrix {
            users,
            items,
            row_ptr,
            cols,
            values,
        })
    }

    /// Builds a matrix holding every rating, with index maps covering exactly
    /// the ids present.
    pub fn from_ratings(ratings: &[RawRating]) -> Result<Self> {
        let users = IdMap::from_ids(ratings.iter().map(|r| r.user_id));
        let items = IdMap::from_ids(ratings.iter().map(|r| r.item_id));
        let entries = ratings
            .iter()
            .map(|r| {
                (
                    users.index_of(r.user_id).unwrap(),
                    items.index_of(r.item_id).unwrap(),
                    r.rating,
                )
            })
            .collect();
        Self::from_entries(users, items, entries)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Item indices and normalized values of row `u`. Panics if `u >= m`.
    pub fn row(&self, u: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[u]..self.row_ptr[u + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    pub fn row_len(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn get(&self, u: usize, i: usize) -> Option<f64> {
        if u >= self.num_users() {
            return None;
        }
        let (cols, values) = self.row(u);
        cols.binary_search(&i).ok().map(|pos| values[pos])
    }

    /// The original 1..=5 rating at `(u, i)`, if observed.
    pub fn raw_rating(&self, u: usize, i: usize) -> Option<u8> {
        self.get(u, i).map(to_raw)
    }

    pub fn user_vector(&self, u: usize) -> Result<UserVector> {
        self.check_user(u)?;
        let n = self.num_items();
        let mut values = vec![0.0; n];
        let mut mask = vec![false; n];
        let (cols, vals) = self.row(u);
        for (&i, &v) in cols.iter().zip(vals) {
            values[i] = v;
            mask[i] = true;
        }
        Ok(UserVector { values, mask })
    }

    /// Writes row `u` into a dense buffer of length `n`, zeroing unobserved
    /// positions.
    pub fn fill_dense_row(&self, u: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (cols, vals) = self.row(u);
        for (&i, &v) in cols.iter().zip(vals) {
            out[i] = v;
        }
    }

    /// `(user, item, normalized value)` for every stored entry in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_users()).flat_map(move |u| {
            let (cols, vals) = self.row(u);
            cols.iter().zip(vals).map(move |(&i, &v)| (u, i, v))
        })
    }

    /// Mean raw rating over all stored entries.
    pub fn global_mean_raw(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        Some(denormalize(self.values.iter().sum::<f64>() / self.values.len() as f64))
    }

    pub(crate) fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.num_users() {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: u,
                size: self.num_users(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.num_items() {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: i,
                size: self.num_items(),
            });
        }
        Ok(())
    }
}

pub(crate) fn to_raw(value: f64) -> u8 {
    (value * RATING_SCALE).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestRating {
    pub user: usize,
    pub item: usize,
    /// Original 1..=5 rating.
    pub rating: u8,
    /// `rating / 5`.
    pub value: f64,
}

/// Single random holdout. Index maps on `train` cover users and items from
/// both folds, so test-only ids keep a valid index.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub train: RatingMatrix,
    /// Sorted by `(user, item)`.
    pub test: Vec<TestRating>,
    pub split_seed: u64,
    pub test_fraction: f64,
}

/// Uniform random split over individual ratings. The test fold receives
/// `round(len * test_fraction)` ratings.
pub fn split(ratings: &[RawRating], test_fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if ratings.is_empty() {
        return Err(Error::Config("cannot split an empty rating list".into()));
    }
    let users = IdMap::from_ids(ratings.iter().map(|r| r.user_id));
    let items = IdMap::from_ids(ratings.iter().map(|r| r.item_id));

    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let test_len = (ratings.len() as f64 * test_fraction).round() as usize;

    let index = |r: &RawRating| {
        (
            users.index_of(r.user_id).unwrap(),
            items.index_of(r.item_id).unwrap(),
        )
    };
    let mut test: Vec<TestRating> = order[..test_len]
        .iter()
        .map(|&k| {
            let r = &ratings[k];
            let (user, item) = index(r);
            Ok(TestRating {
                user,
                item,
                rating: r.rating,
                value: normalize(r.rating as i64)?,
            })
        })
        .collect::<Result<_>>()?;
    test.sort_unstable_by_key(|t| (t.user, t.item));
    if let Some(w) = test.windows(2).find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item)) {
        return Err(Error::DuplicateRating {
            user_id: users.ids[w[0].user],
            item_id: items.ids[w[0].item],
        });
    }
    let train_entries: Vec<(usize, usize, u8)> = order[test_len..]
        .iter()
        .map(|&k| {
            let (u, i) = index(&ratings[k]);
            (u, i, ratings[k].rating)
        })
        .collect();
    let train = RatingMatrix::from_entries(users, items, train_entries)?;
    let test_keys: HashSet<(usize, usize)> = test.iter().map(|t| (t.user, t.item)).collect();
    if let Some((u, i, _)) = train.entries().find(|&(u, i, _)| test_keys.contains(&(u, i))) {
        return Err(Error::DuplicateRating {
            user_id: train.users.ids[u],
            item_id: train.items.ids[i],
        });
    }
    Ok(DataSplit {
        train,
        test,
        split_seed: seed,
        test_fraction,
    })
}

impl DataSplit {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Writes `user_id,item_id,rating,fold` for every rating, train rows
    /// first, each fold in `(user, item)` order.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "user_id,item_id,rating,fold")?;
        let users = self.train.users();
        let items = self.train.items();
        for (u, i, v) in self.train.entries() {
            writeln!(
                out,
                "{},{},{},train",
                users.ids[u],
                items.ids[i],
                to_raw(v)
            )?;
        }
        for t in &self.test {
            writeln!(
                out,
                "{},{},{},test",
                users.ids[t.user], items.ids[t.item], t.rating
            )?;
        }
        Ok(())
    }
}

/// Smallest number of ratings any single user has; `None` for an empty list.
pub fn min_ratings_per_user(ratings: &[RawRating]) -> Option<usize> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for r in ratings {
        *counts.entry(r.user_id).or_default() += 1;
    }
    counts.values().copied().min()
}

/// Logs a warning when some user has fewer than `min` ratings. Returns whether
/// the floor holds.
pub fn check_min_user_ratings(ratings: &[RawRating], min: usize) -> bool {
    match min_ratings_per_user(ratings) {
        Some(lowest) if lowest < min => {
            log::warn!("some user has only {lowest} ratings (expected at least {min})");
            false
        }
        _ => true,
    }
}
