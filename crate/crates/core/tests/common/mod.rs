//! Brute-force reference implementations and random fixtures shared by the
//! integration and acceptance tests. Nothing here calls into the code paths
//! it is used to check, apart from the `loss` closure handed to
//! [`max_gradient_error`].

#![allow(dead_code)]

use std::collections::HashSet;

use eautorec::autoencoder::{Batch, InputCombine, ModelParams, TrainConfig, Variant};
use eautorec::dataset::{IdMap, RatingMatrix, TestRating};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense raw ratings (0 = unobserved) with roughly `density` of entries set.
pub fn random_raw_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> Vec<Vec<u8>> {
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| if rng.gen_bool(density) { rng.gen_range(1..=5) } else { 0 })
                .collect()
        })
        .collect()
}

pub fn to_rating_matrix(raw: &[Vec<u8>]) -> RatingMatrix {
    let n = raw.first().map_or(0, Vec::len);
    let entries = raw
        .iter()
        .enumerate()
        .flat_map(|(u, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &r)| r > 0)
                .map(move |(i, &r)| (u, i, r))
        })
        .collect();
    RatingMatrix::from_entries(
        IdMap::from_ids(0..raw.len() as u32),
        IdMap::from_ids(0..n as u32),
        entries,
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// neighborhood explainability, straight from the definitions

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for j in 0..a.len() {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
    }
}

/// Neighbors of `u`: every other user with positive similarity, sorted by
/// similarity descending then index ascending, cut to `size`.
pub fn oracle_neighbors(raw: &[Vec<u8>], u: usize, size: usize) -> Vec<(usize, f64)> {
    let norm = |row: &[u8]| row.iter().map(|&r| r as f64 / 5.0).collect::<Vec<f64>>();
    let a = norm(&raw[u]);
    let mut all: Vec<(usize, f64)> = Vec::new();
    for v in 0..raw.len() {
        if v == u {
            continue;
        }
        let s = oracle_cosine(&a, &norm(&raw[v]));
        if s > 0.0 {
            all.push((v, s));
        }
    }
    // exhaustive selection: repeatedly take the best remaining candidate
    let mut picked = Vec::new();
    while picked.len() < size && !all.is_empty() {
        let mut best = 0;
        for k in 1..all.len() {
            let (v, s) = all[k];
            let (bv, bs) = all[best];
            if s > bs || (s == bs && v < bv) {
                best = k;
            }
        }
        picked.push(all.remove(best));
    }
    picked
}

/// Thresholded explainability matrix on the `[0, 1]` scale.
pub fn oracle_explainability(raw: &[Vec<u8>], size: usize, theta: f64) -> Vec<Vec<f64>> {
    let m = raw.len();
    let n = raw.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; n]; m];
    for u in 0..m {
        let neighbors = oracle_neighbors(raw, u, size);
        for i in 0..n {
            let mut score = 0.0;
            for x in 1..=5u8 {
                let count = neighbors.iter().filter(|&&(v, _)| raw[v][i] == x).count();
                let pr = if neighbors.is_empty() {
                    0.0
                } else {
                    count as f64 / neighbors.len() as f64
                };
                score += x as f64 * pr;
            }
            if score > theta {
                out[u][i] = score / 5.0;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// autoencoder

/// Random parameters with nonzero biases.
pub fn random_params(rng: &mut ChaCha8Rng, variant: Variant, combine: InputCombine, k: usize, n: usize) -> ModelParams {
    let mut p = ModelParams::zeros(variant, combine, k, n);
    for v in p.w1.iter_mut().chain(p.b.iter_mut()).chain(p.w2.iter_mut()).chain(p.b_prime.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    p
}

/// A random batch: ratings with mask, and an explainability row when needed.
pub struct RandomBatch {
    pub ratings: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub explain: Vec<Vec<f64>>,
}

impl RandomBatch {
    pub fn new(rng: &mut ChaCha8Rng, users: usize, n: usize) -> Self {
        let mut ratings = Vec::new();
        let mut masks = Vec::new();
        let mut explain = Vec::new();
        for _ in 0..users {
            let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            ratings.push(
                mask.iter()
                    .map(|&m| if m { rng.gen_range(1..=5) as f64 / 5.0 } else { 0.0 })
                    .collect(),
            );
            masks.push(mask);
            explain.push(
                (0..n)
                    .map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 })
                    .collect(),
            );
        }
        RandomBatch { ratings, masks, explain }
    }

    pub fn batch(&self, params: &ModelParams) -> Batch {
        let rows: Vec<(&[f64], &[bool], Option<&[f64]>)> = (0..self.ratings.len())
            .map(|u| {
                (
                    self.ratings[u].as_slice(),
                    self.masks[u].as_slice(),
                    (params.variant == Variant::Explainable).then(|| self.explain[u].as_slice()),
                )
            })
            .collect();
        Batch::from_rows(params, &rows).unwrap()
    }
}

/// Encoder input assembled by hand.
pub fn oracle_input(params: &ModelParams, r: &[f64], e: Option<&[f64]>) -> Vec<f64> {
    match (params.variant, params.combine, e) {
        (Variant::Baseline, _, _) => r.to_vec(),
        (Variant::Explainable, InputCombine::Concat, Some(e)) => r.iter().chain(e).copied().collect(),
        (Variant::Explainable, InputCombine::Sum, Some(e)) => r.iter().zip(e).map(|(a, b)| a + b).collect(),
        _ => panic!("missing explainability row"),
    }
}

/// `(h, r̂)` by explicit loops.
pub fn oracle_forward(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (k, d) = params.w1.dim();
    let n = params.w2.nrows();
    let mut h = vec![0.0; k];
    for j in 0..k {
        let mut z = params.b[j];
        for c in 0..d {
            z += params.w1[[j, c]] * x[c];
        }
        h[j] = 1.0 / (1.0 + (-z).exp());
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut z = params.b_prime[i];
        for j in 0..k {
            z += params.w2[[i, j]] * h[j];
        }
        out[i] = z;
    }
    (h, out)
}

pub fn oracle_loss(params: &ModelParams, data: &RandomBatch, lambda: f64) -> f64 {
    let mut total = 0.0;
    for u in 0..data.ratings.len() {
        let e = (params.variant == Variant::Explainable).then(|| data.explain[u].as_slice());
        let x = oracle_input(params, &data.ratings[u], e);
        let (_, r_hat) = oracle_forward(params, &x);
        for i in 0..r_hat.len() {
            if data.masks[u][i] {
                let d = data.ratings[u][i] - r_hat[i];
                total += d * d;
            }
        }
    }
    let mut reg = 0.0;
    for w in params.w1.iter().chain(params.w2.iter()) {
        reg += w * w;
    }
    total + lambda / 2.0 * reg
}

/// Gradient-shaped container for finite differences.
pub struct FlatGrad {
    pub w1: Array2<f64>,
    pub b: Array1<f64>,
    pub w2: Array2<f64>,
    pub b_prime: Array1<f64>,
}

/// Central differences of `loss` in every parameter coordinate.
pub fn finite_differences(params: &ModelParams, step: f64, loss: impl Fn(&ModelParams) -> f64) -> FlatGrad {
    let mut p = params.clone();
    let mut probe = |get: &mut dyn FnMut(&mut ModelParams) -> &mut f64| {
        let orig = *get(&mut p);
        *get(&mut p) = orig + step;
        let up = loss(&p);
        *get(&mut p) = orig - step;
        let down = loss(&p);
        *get(&mut p) = orig;
        (up - down) / (2.0 * step)
    };
    let (k, d) = params.w1.dim();
    let n = params.w2.nrows();
    let w1 = Array2::from_shape_fn((k, d), |(a, c)| probe(&mut |q| &mut q.w1[[a, c]]));
    let b = Array1::from_shape_fn(k, |a| probe(&mut |q| &mut q.b[a]));
    let w2 = Array2::from_shape_fn((n, k), |(a, c)| probe(&mut |q| &mut q.w2[[a, c]]));
    let b_prime = Array1::from_shape_fn(n, |a| probe(&mut |q| &mut q.b_prime[a]));
    FlatGrad { w1, b, w2, b_prime }
}

/// Relative error with a small floor on the denominator so that coordinates
/// whose true gradient is exactly zero are judged on rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

/// Largest relative error between analytic gradients and finite differences
/// of the oracle loss.
pub fn max_gradient_error(params: &ModelParams, data: &RandomBatch, lambda: f64) -> f64 {
    let batch = data.batch(params);
    let g = eautorec::autoencoder::gradients(params, &batch, lambda).unwrap();
    let fd = finite_differences(params, GRAD_CHECK_STEP, |p| oracle_loss(p, data, lambda));
    let pairs = g
        .w1
        .iter()
        .zip(fd.w1.iter())
        .chain(g.b.iter().zip(fd.b.iter()))
        .chain(g.w2.iter().zip(fd.w2.iter()))
        .chain(g.b_prime.iter().zip(fd.b_prime.iter()));
    pairs.map(|(&a, &f)| relative_error(a, f)).fold(0.0, f64::max)
}

pub fn toy_config(variant: Variant, k: usize) -> TrainConfig {
    TrainConfig {
        hidden_units: k,
        variant,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------
// metrics

pub fn oracle_rmse(pairs: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for &(truth, pred) in pairs {
        let p = if pred < 1.0 { 1.0 } else if pred > 5.0 { 5.0 } else { pred };
        s += (truth - p) * (truth - p);
    }
    (s / pairs.len() as f64).sqrt()
}

/// Full sort of unrated items, best first, ties by lower index.
pub fn oracle_top_n(scores: &[f64], rated: &[bool], n_top: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !rated[i]).collect();
    // insertion sort keeps this independent of the library's selection path
    for a in 1..items.len() {
        let mut b = a;
        while b > 0 {
            let (x, y) = (items[b - 1], items[b]);
            let better = scores[y] > scores[x] || (scores[y] == scores[x] && y < x);
            if !better {
                break;
            }
            items.swap(b - 1, b);
            b -= 1;
        }
    }
    items.truncate(n_top);
    items
}

pub fn oracle_mep(lists: &[(usize, Vec<usize>)], explainable: &HashSet<(usize, usize)>) -> f64 {
    let mut total = 0.0;
    let mut users = 0;
    for (u, items) in lists {
        if items.is_empty() {
            continue;
        }
        let hits = items.iter().filter(|&&i| explainable.contains(&(*u, i))).count();
        total += hits as f64 / items.len() as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// MAP by enumerating every cut-off position.
pub fn oracle_map(lists: &[(usize, Vec<usize>)], test: &[TestRating], n_top: usize, threshold: u8) -> f64 {
    let mut total = 0.0;
    let mut users = 0;
    for (u, items) in lists {
        let relevant: HashSet<usize> = test
            .iter()
            .filter(|t| t.user == *u && t.rating >= threshold)
            .map(|t| t.item)
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let cut = &items[..items.len().min(n_top)];
        let mut ap = 0.0;
        for j in 1..=cut.len() {
            if relevant.contains(&cut[j - 1]) {
                let hits_to_j = cut[..j].iter().filter(|i| relevant.contains(i)).count();
                ap += hits_to_j as f64 / j as f64;
            }
        }
        ap /= relevant.len().min(n_top) as f64;
        total += ap;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// Predictions, training masks, held-out ratings and explainable cells for a
/// random toy problem of at most 5 users and 10 items.
pub struct MetricFixture {
    pub scores: Vec<Vec<f64>>,
    pub rated: Vec<Vec<bool>>,
    pub test: Vec<TestRating>,
    pub explain: Vec<(usize, usize, f64)>,
}

pub fn test_rating(user: usize, item: usize, rating: u8) -> TestRating {
    TestRating {
        user,
        item,
        rating,
        value: rating as f64 / 5.0,
    }
}

pub fn metric_fixture(seed: u64) -> MetricFixture {
    let mut rng = rng(seed);
    let users = rng.gen_range(1..=5);
    let items = rng.gen_range(1..=10);
    let mut f = MetricFixture {
        scores: vec![vec![0.0; items]; users],
        rated: vec![vec![false; items]; users],
        test: Vec::new(),
        explain: Vec::new(),
    };
    for u in 0..users {
        for i in 0..items {
            // a coarse grid makes score ties common
            f.scores[u][i] = rng.gen_range(0..6) as f64 / 5.0;
            f.rated[u][i] = rng.gen_bool(0.3);
            if !f.rated[u][i] && rng.gen_bool(0.4) {
                f.test.push(test_rating(u, i, rng.gen_range(1..=5)));
            }
            if rng.gen_bool(0.5) {
                f.explain.push((u, i, rng.gen_range(1..=25) as f64 / 25.0));
            }
        }
    }
    f
}
