//! User-user cosine neighborhoods and the neighborhood explainability matrix.
//!
//! For user `u` with neighborhood `N_u`, the explainability score of item `i`
//! is the expected rating of `i` among the neighbors:
//!
//! ```text
//! score(u, i) = Σ_{x=1..5} x · |{v ∈ N_u : r_vi = x}| / |N_u|
//! ```
//!
//! Neighbors who did not rate `i` contribute nothing to the sum but still
//! count in `|N_u|`. The explainability matrix keeps `score / 5` where
//! `score > θ` and zero elsewhere, so rows live on the same `[0, 1]` scale as
//! normalized ratings.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::dataset::{to_raw, RatingMatrix, MAX_RATING, MIN_RATING, RATING_SCALE};
use crate::error::{Error, Result};

/// Cosine similarity of two dense vectors; zero when either norm is zero.
///
/// Panics if the lengths differ.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity: length mismatch");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    cosine_from_parts(dot, na, nb)
}

pub(crate) fn cosine_from_parts(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    if sq_norm_a == 0.0 || sq_norm_b == 0.0 {
        return 0.0;
    }
    (dot / (sq_norm_a * sq_norm_b).sqrt()).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub user: usize,
    pub similarity: f64,
}

/// The nearest users to `user`, sorted by similarity descending with ties
/// broken by ascending user index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub user: usize,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.user)
    }
}

/// Precomputed squared row norms, shared by every neighbor query.
struct RowNorms(Vec<f64>);

impl RowNorms {
    fn new(train: &RatingMatrix) -> Self {
        RowNorms(
            (0..train.num_users())
                .map(|u| train.row(u).1.iter().map(|v| v * v).sum())
                .collect(),
        )
    }
}

/// Similarities from `u` to every user over 0-imputed dense rows.
fn similarities_from(train: &RatingMatrix, norms: &RowNorms, u: usize, dense_u: &mut [f64]) -> Vec<f64> {
    train.fill_dense_row(u, dense_u);
    (0..train.num_users())
        .map(|v| {
            let (cols, vals) = train.row(v);
            let mut dot = 0.0;
            for (&i, &val) in cols.iter().zip(vals) {
                dot += dense_u[i] * val;
            }
            cosine_from_parts(dot, norms.0[u], norms.0[v])
        })
        .collect()
}

fn select_neighbors(u: usize, sims: &[f64], size: usize) -> NeighborSet {
    let mut candidates: Vec<Neighbor> = sims
        .iter()
        .enumerate()
        .filter(|&(v, &s)| v != u && s > 0.0)
        .map(|(v, &s)| Neighbor { user: v, similarity: s })
        .collect();
    candidates.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.user.cmp(&b.user))
    });
    candidates.truncate(size);
    NeighborSet {
        user: u,
        neighbors: candidates,
    }
}

/// The `size` most cosine-similar users to `u`. Users with zero similarity
/// (no co-rated item) are never neighbors, so the set can be shorter than
/// `size`.
pub fn find_neighbors(train: &RatingMatrix, u: usize, size: usize) -> Result<NeighborSet> {
    train.check_user(u)?;
    if size == 0 {
        return Err(Error::Config("neighborhood size must be at least 1".into()));
    }
    let norms = RowNorms::new(train);
    let mut dense = vec![0.0; train.num_items()];
    let sims = similarities_from(train, &norms, u, &mut dense);
    Ok(select_neighbors(u, &sims, size))
}

/// Number of neighbors who gave each raw rating to item `i`; index `x - 1`.
pub fn neighbor_histogram(
    train: &RatingMatrix,
    neighbors: &NeighborSet,
    i: usize,
) -> Result<[usize; MAX_RATING as usize]> {
    train.check_item(i)?;
    let mut hist = [0usize; MAX_RATING as usize];
    for v in neighbors.users() {
        if let Some(r) = train.raw_rating(v, i) {
            hist[(r - MIN_RATING) as usize] += 1;
        }
    }
    Ok(hist)
}

/// Fraction of the neighborhood that rated item `i` exactly `x` (raw scale).
/// Zero for an empty neighborhood.
pub fn rating_probability(
    train: &RatingMatrix,
    neighbors: &NeighborSet,
    i: usize,
    x: u8,
) -> Result<f64> {
    if !(MIN_RATING..=MAX_RATING).contains(&x) {
        return Err(Error::RatingOutOfRange(x as i64));
    }
    let hist = neighbor_histogram(train, neighbors, i)?;
    Ok(probability(hist[(x - MIN_RATING) as usize], neighbors.len()))
}

fn probability(count: usize, neighborhood: usize) -> f64 {
    if neighborhood == 0 {
        0.0
    } else {
        count as f64 / neighborhood as f64
    }
}

fn expected_rating(hist: &[usize; MAX_RATING as usize], neighborhood: usize) -> f64 {
    (MIN_RATING..=MAX_RATING)
        .map(|x| x as f64 * probability(hist[(x - MIN_RATING) as usize], neighborhood))
        .sum()
}

/// Expected raw rating of item `i` over the neighborhood, in `[0, 5]`.
pub fn explainability_score(train: &RatingMatrix, neighbors: &NeighborSet, i: usize) -> Result<f64> {
    let hist = neighbor_histogram(train, neighbors, i)?;
    Ok(expected_rating(&hist, neighbors.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StorageKind {
    #[default]
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Per-user `(item, score)` lists sorted by item.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Thresholded, `[0, 1]`-scaled explainability scores for every user×item.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainabilityMatrix {
    num_users: usize,
    num_items: usize,
    theta: f64,
    neighborhood_size: usize,
    storage: Storage,
}

/// Builds the dense explainability matrix from training ratings.
pub fn build_explainability_matrix(
    train: &RatingMatrix,
    size: usize,
    theta: f64,
) -> Result<ExplainabilityMatrix> {
    build_explainability_matrix_with(train, size, theta, StorageKind::Dense)
}

pub fn build_explainability_matrix_with(
    train: &RatingMatrix,
    size: usize,
    theta: f64,
    storage: StorageKind,
) -> Result<ExplainabilityMatrix> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::Config(format!("theta must be finite and >= 0, got {theta}")));
    }
    if size == 0 {
        return Err(Error::Config("neighborhood size must be at least 1".into()));
    }
    let (m, n) = (train.num_users(), train.num_items());
    let norms = RowNorms::new(train);

    // Rows are independent; collecting in user order keeps the result
    // identical for any thread count.
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |dense, u| {
                let sims = similarities_from(train, &norms, u, dense);
                let neighbors = select_neighbors(u, &sims, size);
                let mut hist = vec![[0usize; MAX_RATING as usize]; n];
                for v in neighbors.users() {
                    let (cols, vals) = train.row(v);
                    for (&i, &val) in cols.iter().zip(vals) {
                        hist[i][(to_raw(val) - MIN_RATING) as usize] += 1;
                    }
                }
                hist.iter()
                    .enumerate()
                    .filter_map(|(i, h)| {
                        let score = expected_rating(h, neighbors.len());
                        (score > theta).then_some((i, score / RATING_SCALE))
                    })
                    .collect()
            },
        )
        .collect();

    let storage = match storage {
        StorageKind::Sparse => Storage::Sparse(rows),
        StorageKind::Dense => {
            let mut dense = vec![0.0; m * n];
            for (u, row) in rows.iter().enumerate() {
                for &(i, s) in row {
                    dense[u * n + i] = s;
                }
            }
            Storage::Dense(dense)
        }
    };
    Ok(ExplainabilityMatrix {
        num_users: m,
        num_items: n,
        theta,
        neighborhood_size: size,
        storage,
    })
}

impl ExplainabilityMatrix {
    /// Builds a matrix from explicit `(user, item, score)` entries. Scores must
    /// lie in `(0, 1]`; duplicates keep the last value.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        theta: f64,
        neighborhood_size: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        storage: StorageKind,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_users];
        for (u, i, s) in entries {
            if u >= num_users {
                return Err(Error::IndexOutOfRange { kind: "user", index: u, size: num_users });
            }
            if i >= num_items {
                return Err(Error::IndexOutOfRange { kind: "item", index: i, size: num_items });
            }
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Format {
                    what: "explainability entry",
                    message: format!("score {s} outside (0, 1]"),
                });
            }
            rows[u].push((i, s));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            let mut dedup: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(i, s) in row.iter() {
                match dedup.last_mut() {
                    Some(last) if last.0 == i => last.1 = s,
                    _ => dedup.push((i, s)),
                }
            }
            *row = dedup;
        }
        let storage = match storage {
            StorageKind::Sparse => Storage::Sparse(rows),
            StorageKind::Dense => {
                let mut dense = vec![0.0; num_users * num_items];
                for (u, row) in rows.iter().enumerate() {
                    for &(i, s) in row {
                        dense[u * num_items + i] = s;
                    }
                }
                Storage::Dense(dense)
            }
        };
        Ok(ExplainabilityMatrix {
            num_users,
            num_items,
            theta,
            neighborhood_size,
            storage,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn neighborhood_size(&self) -> usize {
        self.neighborhood_size
    }

    pub fn storage_kind(&self) -> StorageKind {
        match self.storage {
            Storage::Dense(_) => StorageKind::Dense,
            Storage::Sparse(_) => StorageKind::Sparse,
        }
    }

    /// `E[u, i]`; zero when out of range or thresholded away.
    pub fn get(&self, u: usize, i: usize) -> f64 {
        if u >= self.num_users || i >= self.num_items {
            return 0.0;
        }
        match &self.storage {
            Storage::Dense(d) => d[u * self.num_items + i],
            Storage::Sparse(rows) => rows[u]
                .binary_search_by_key(&i, |e| e.0)
                .map(|pos| rows[u][pos].1)
                .unwrap_or(0.0),
        }
    }

    pub fn is_explainable(&self, u: usize, i: usize) -> bool {
        self.get(u, i) > 0.0
    }

    /// Writes row `u` (the explainability vector of user `u`) into `out`.
    pub fn fill_row(&self, u: usize, out: &mut [f64]) {
        match &self.storage {
            Storage::Dense(d) => {
                out.copy_from_slice(&d[u * self.num_items..(u + 1) * self.num_items])
            }
            Storage::Sparse(rows) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for &(i, s) in &rows[u] {
                    out[i] = s;
                }
            }
        }
    }

    pub fn row(&self, u: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_items];
        self.fill_row(u, &mut out);
        out
    }

    /// Nonzero entries in row-major order.
    pub fn nonzero(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            Storage::Dense(d) => d
                .iter()
                .enumerate()
                .filter(|(_, &s)| s != 0.0)
                .map(|(k, &s)| (k / self.num_items, k % self.num_items, s))
                .collect(),
            Storage::Sparse(rows) => rows
                .iter()
                .enumerate()
                .flat_map(|(u, row)| row.iter().map(move |&(i, s)| (u, i, s)))
                .collect(),
        }
    }

    pub fn nonzero_count(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.iter().filter(|&&s| s != 0.0).count(),
            Storage::Sparse(rows) => rows.iter().map(Vec::len).sum(),
        }
    }

    /// Persists nonzero entries as `user_id,item_id,score` under a comment
    /// header carrying the neighborhood size, θ and shape.
    pub fn write_csv<W: Write>(&self, train: &RatingMatrix, mut out: W) -> Result<()> {
        if train.num_users() != self.num_users || train.num_items() != self.num_items {
            return Err(Error::Dimension(
                "explainability matrix shape does not match the rating matrix".into(),
            ));
        }
        let io = |e| Error::io("<explainability csv>", e);
        writeln!(
            out,
            "# explainability neighborhood_size={} theta={} num_users={} num_items={}",
            self.neighborhood_size, self.theta, self.num_users, self.num_items
        )
        .map_err(io)?;
        writeln!(out, "user_id,item_id,score").map_err(io)?;
        for (u, i, s) in self.nonzero() {
            writeln!(
                out,
                "{},{},{}",
                train.users().id_of(u).unwrap(),
                train.items().id_of(i).unwrap(),
                s
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Reads a matrix written by [`ExplainabilityMatrix::write_csv`], mapping
    /// external ids through `train`'s index maps.
    pub fn read_csv<R: BufRead>(train: &RatingMatrix, reader: R, storage: StorageKind) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "explainability csv",
            message,
        };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| Error::io("<explainability csv>", e))?;
        let header = header
            .strip_prefix("# explainability ")
            .ok_or_else(|| bad(format!("unexpected header {header:?}")))?;
        let mut size = None;
        let mut theta = None;
        let mut shape = (None, None);
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field {kv:?}")))?;
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad {k}: {v}")));
            match k {
                "neighborhood_size" => size = Some(parse_usize(v)?),
                "theta" => theta = Some(v.parse::<f64>().map_err(|_| bad(format!("bad theta: {v}")))?),
                "num_users" => shape.0 = Some(parse_usize(v)?),
                "num_items" => shape.1 = Some(parse_usize(v)?),
                _ => {}
            }
        }
        let (Some(size), Some(theta)) = (size, theta) else {
            return Err(bad("header must record neighborhood_size and theta".into()));
        };
        if shape.0.is_some_and(|m| m != train.num_users()) || shape.1.is_some_and(|n| n != train.num_items()) {
            return Err(Error::Dimension(
                "cached explainability matrix shape does not match the rating matrix".into(),
            ));
        }
        let mut entries = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<explainability csv>", e))?;
            if idx == 0 && line.trim() == "user_id,item_id,score" {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", idx + 2)));
            }
            let uid: u32 = fields[0].parse().map_err(|_| bad(format!("bad user id {:?}", fields[0])))?;
            let iid: u32 = fields[1].parse().map_err(|_| bad(format!("bad item id {:?}", fields[1])))?;
            let score: f64 = fields[2].parse().map_err(|_| bad(format!("bad score {:?}", fields[2])))?;
            let u = train.users().index_of(uid).ok_or(Error::UnknownId { kind: "user", id: uid })?;
            let i = train.items().index_of(iid).ok_or(Error::UnknownId { kind: "item", id: iid })?;
            entries.push((u, i, score));
        }
        Self::from_entries(train.num_users(), train.num_items(), theta, size, entries, storage)
    }
}
