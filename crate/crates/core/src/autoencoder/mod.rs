//! User-based AutoRec and its explainable variant.
//!
//! Both models share one hidden sigmoid layer and an identity output layer:
//!
//! ```text
//! h    = σ(W1 · x + b)
//! r̂    = W2 · h + b'
//! loss = Σ_u ‖mask_u ⊙ (r_u − r̂_u)‖² + λ/2 (‖W1‖_F² + ‖W2‖_F²)
//! ```
//!
//! The baseline feeds `x = r` (length `n`). The explainable variant feeds the
//! concatenation `x = [r ‖ e]` (length `2n`) where `e` is the user's row of
//! the explainability matrix; an experimental elementwise `x = r + e` mode is
//! kept for comparison.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};
use crate::neighborhood::ExplainabilityMatrix;

pub use checkpoint::Checkpoint;
pub use train::{predict_all, train, EpochRecord, TrainedModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// AutoRec: ratings only.
    #[default]
    #[serde(alias = "autorec")]
    Baseline,
    /// E-AutoRec: ratings plus explainability vector.
    #[serde(alias = "e-autorec")]
    Explainable,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "autorec",
            Variant::Explainable => "e-autorec",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "autorec" | "baseline" => Ok(Variant::Baseline),
            "e-autorec" | "eautorec" | "explainable" => Ok(Variant::Explainable),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// How the explainable variant combines ratings and explainability scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCombine {
    /// `[r ‖ e]`, input width `2n`.
    #[default]
    Concat,
    /// Experimental: `r + e`, input width `n`.
    Sum,
}

impl fmt::Display for InputCombine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputCombine::Concat => "concat",
            InputCombine::Sum => "sum",
        })
    }
}

impl FromStr for InputCombine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(InputCombine::Concat),
            "sum" => Ok(InputCombine::Sum),
            other => Err(Error::Config(format!("unknown input combine mode {other:?}"))),
        }
    }
}

/// Parameter update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Mini-batch gradient descent, with optional classical momentum.
    #[default]
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Training hyperparameters. `theta` and `neighborhood_size` only matter for
/// the explainable variant, where they select the explainability matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Classical momentum coefficient for [`Optimizer::Sgd`]; 0 gives plain
    /// mini-batch gradient descent.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub combine: InputCombine,
    pub theta: f64,
    pub neighborhood_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_units: 300,
            lambda: 0.01,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            momentum: 0.0,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            variant: Variant::Baseline,
            combine: InputCombine::Concat,
            theta: 0.0,
            neighborhood_size: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_users: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden_units == 0 {
            return fail("hidden_units must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > num_users.max(1) {
            return fail(format!(
                "batch_size must lie in 1..={}, got {}",
                num_users, self.batch_size
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.theta >= 0.0) {
            return fail(format!("theta must be >= 0, got {}", self.theta));
        }
        if self.neighborhood_size == 0 {
            return fail("neighborhood_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Encoder and decoder weights. `w1` is `k × d`, `w2` is `n × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub combine: InputCombine,
    pub w1: Array2<f64>,
    pub b: Array1<f64>,
    pub w2: Array2<f64>,
    pub b_prime: Array1<f64>,
}

pub(crate) fn input_dim(variant: Variant, combine: InputCombine, n: usize) -> usize {
    match (variant, combine) {
        (Variant::Explainable, InputCombine::Concat) => 2 * n,
        _ => n,
    }
}

impl ModelParams {
    /// All-zero parameters of the right shape.
    pub fn zeros(variant: Variant, combine: InputCombine, k: usize, n: usize) -> Self {
        let d = input_dim(variant, combine, n);
        ModelParams {
            variant,
            combine,
            w1: Array2::zeros((k, d)),
            b: Array1::zeros(k),
            w2: Array2::zeros((n, k)),
            b_prime: Array1::zeros(n),
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_items(&self) -> usize {
        self.w2.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b).chain(&self.w2).chain(&self.b_prime).all(|v| v.is_finite())
    }

    fn check_shapes(&self) -> Result<()> {
        let (k, n) = (self.hidden_units(), self.num_items());
        if self.input_dim() != input_dim(self.variant, self.combine, n)
            || self.b.len() != k
            || self.w2.ncols() != k
            || self.b_prime.len() != n
        {
            return Err(Error::Dimension(format!(
                "inconsistent parameter shapes: w1 {:?}, b {}, w2 {:?}, b' {}",
                self.w1.dim(),
                self.b.len(),
                self.w2.dim(),
                self.b_prime.len()
            )));
        }
        Ok(())
    }

    /// Squared Frobenius norms of both weight matrices, summed.
    pub fn weight_sq_norm(&self) -> f64 {
        self.w1.iter().map(|v| v * v).sum::<f64>() + self.w2.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(config: &TrainConfig, n: usize, seed: u64) -> Result<ModelParams> {
    if n == 0 {
        return Err(Error::Config("item count must be at least 1".into()));
    }
    if config.hidden_units == 0 {
        return Err(Error::Config("hidden_units must be at least 1".into()));
    }
    let k = config.hidden_units;
    let mut params = ModelParams::zeros(config.variant, config.combine, k, n);
    let d = params.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glorot = |fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Uniform::new_inclusive(-limit, limit)
    };
    let dist = glorot(d, k);
    params.w1.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    let dist = glorot(k, n);
    params.w2.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    Ok(params)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Assembles the encoder input for one user.
pub fn build_input(params: &ModelParams, r: &[f64], e: Option<&[f64]>) -> Result<Array1<f64>> {
    let n = params.num_items();
    let mut out = Array1::zeros(params.input_dim());
    write_input(params.variant, params.combine, n, r, e, out.as_slice_mut().unwrap())?;
    Ok(out)
}

fn write_input(
    variant: Variant,
    combine: InputCombine,
    n: usize,
    r: &[f64],
    e: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    if r.len() != n {
        return Err(Error::Dimension(format!("rating vector has length {}, expected {n}", r.len())));
    }
    match (variant, e) {
        (Variant::Baseline, None) => out.copy_from_slice(r),
        (Variant::Baseline, Some(_)) => {
            return Err(Error::Dimension("baseline model takes no explainability vector".into()))
        }
        (Variant::Explainable, None) => {
            return Err(Error::Dimension("explainable model requires an explainability vector".into()))
        }
        (Variant::Explainable, Some(e)) => {
            if e.len() != n {
                return Err(Error::Dimension(format!(
                    "explainability vector has length {}, expected {n}",
                    e.len()
                )));
            }
            match combine {
                InputCombine::Concat => {
                    out[..n].copy_from_slice(r);
                    out[n..].copy_from_slice(e);
                }
                InputCombine::Sum => {
                    for ((o, &x), &y) in out.iter_mut().zip(r).zip(e) {
                        *o = x + y;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Hidden representation `σ(W1 · x + b)`.
pub fn encode(params: &ModelParams, r: &[f64], e: Option<&[f64]>) -> Result<Array1<f64>> {
    params.check_shapes()?;
    let x = build_input(params, r, e)?;
    Ok((params.w1.dot(&x) + &params.b).mapv_into(sigmoid))
}

/// Reconstruction `W2 · h + b'` (identity output).
pub fn decode(params: &ModelParams, h: &[f64]) -> Result<Array1<f64>> {
    params.check_shapes()?;
    if h.len() != params.hidden_units() {
        return Err(Error::Dimension(format!(
            "hidden vector has length {}, expected {}",
            h.len(),
            params.hidden_units()
        )));
    }
    Ok(params.w2.dot(&ndarray::ArrayView1::from(h)) + &params.b_prime)
}

/// Full predicted row on the normalized scale, unclipped.
pub fn predict(params: &ModelParams, train_row: &[f64], e_row: Option<&[f64]>) -> Result<Array1<f64>> {
    let h = encode(params, train_row, e_row)?;
    decode(params, h.as_slice().unwrap())
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub input: Array1<f64>,
    pub h: Array1<f64>,
    pub r_hat: Array1<f64>,
    pub mask: Vec<bool>,
}

pub fn forward(params: &ModelParams, r: &[f64], e: Option<&[f64]>, mask: &[bool]) -> Result<ForwardCache> {
    if mask.len() != params.num_items() {
        return Err(Error::Dimension(format!(
            "mask has length {}, expected {}",
            mask.len(),
            params.num_items()
        )));
    }
    let input = build_input(params, r, e)?;
    let h = encode(params, r, e)?;
    let r_hat = decode(params, h.as_slice().unwrap())?;
    Ok(ForwardCache {
        input,
        h,
        r_hat,
        mask: mask.to_vec(),
    })
}

/// A mini-batch in matrix form: one row per user.
///
/// `targets` are the ratings to reconstruct and `mask` is `1.0` on observed
/// entries and `0.0` elsewhere. Inputs are normally built from the same
/// ratings, but are kept separate so tests can perturb one without the other.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub mask: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Builds a batch from explicit per-user rows.
    pub fn from_rows(
        params: &ModelParams,
        rows: &[(&[f64], &[bool], Option<&[f64]>)],
    ) -> Result<Self> {
        let n = params.num_items();
        let mut batch = Batch::zeros(rows.len(), params.input_dim(), n);
        for (row, &(r, mask, e)) in rows.iter().enumerate() {
            if mask.len() != n {
                return Err(Error::Dimension(format!("mask has length {}, expected {n}", mask.len())));
            }
            write_input(
                params.variant,
                params.combine,
                n,
                r,
                e,
                batch.inputs.row_mut(row).as_slice_mut().unwrap(),
            )?;
            batch.targets.row_mut(row).assign(&ndarray::ArrayView1::from(r));
            for (m, &b) in batch.mask.row_mut(row).iter_mut().zip(mask) {
                *m = if b { 1.0 } else { 0.0 };
            }
        }
        Ok(batch)
    }

    /// Builds a batch for training users straight from the rating matrix and
    /// (for the explainable variant) the explainability matrix.
    pub fn from_users(
        params: &ModelParams,
        train: &RatingMatrix,
        explain: Option<&ExplainabilityMatrix>,
        users: &[usize],
    ) -> Result<Self> {
        let n = params.num_items();
        if train.num_items() != n {
            return Err(Error::Dimension(format!(
                "rating matrix has {} items, model expects {n}",
                train.num_items()
            )));
        }
        if let Some(e) = explain {
            if e.num_users() != train.num_users() || e.num_items() != n {
                return Err(Error::Dimension("explainability matrix shape mismatch".into()));
            }
        }
        let mut batch = Batch::zeros(users.len(), params.input_dim(), n);
        let mut r = vec![0.0; n];
        let mut e_row = vec![0.0; n];
        for (row, &u) in users.iter().enumerate() {
            train.check_user(u)?;
            train.fill_dense_row(u, &mut r);
            let e = match explain {
                Some(matrix) => {
                    matrix.fill_row(u, &mut e_row);
                    Some(e_row.as_slice())
                }
                None => None,
            };
            write_input(
                params.variant,
                params.combine,
                n,
                &r,
                e,
                batch.inputs.row_mut(row).as_slice_mut().unwrap(),
            )?;
            batch.targets.row_mut(row).assign(&ndarray::ArrayView1::from(&r[..]));
            let (cols, _) = train.row(u);
            let mut mask_row = batch.mask.row_mut(row);
            for &i in cols {
                mask_row[i] = 1.0;
            }
        }
        Ok(batch)
    }

    fn zeros(rows: usize, d: usize, n: usize) -> Self {
        Batch {
            inputs: Array2::zeros((rows, d)),
            targets: Array2::zeros((rows, n)),
            mask: Array2::zeros((rows, n)),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        params.check_shapes()?;
        let n = params.num_items();
        if self.inputs.ncols() != params.input_dim()
            || self.targets.ncols() != n
            || self.mask.ncols() != n
            || self.targets.nrows() != self.len()
            || self.mask.nrows() != self.len()
        {
            return Err(Error::Dimension("batch shape does not match model".into()));
        }
        if self.is_empty() {
            return Err(Error::Config("batch must contain at least one user".into()));
        }
        Ok(())
    }
}

/// Hidden activations and reconstructions for a whole batch.
pub(crate) fn forward_batch(params: &ModelParams, inputs: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut hidden = inputs.dot(&params.w1.t());
    hidden += &params.b;
    hidden.mapv_inplace(sigmoid);
    let mut recon = hidden.dot(&params.w2.t());
    recon += &params.b_prime;
    (hidden, recon)
}

/// Masked squared reconstruction error of a batch, without regularization.
fn masked_error(batch: &Batch, recon: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut residual = recon - &batch.targets;
    residual *= &batch.mask;
    let sse = residual.iter().map(|v| v * v).sum();
    (residual, sse)
}

/// Regularized masked reconstruction loss of a batch.
pub fn loss(params: &ModelParams, batch: &Batch, lambda: f64) -> Result<f64> {
    batch.check(params)?;
    let (_, recon) = forward_batch(params, batch.inputs.view());
    let (_, sse) = masked_error(batch, &recon);
    Ok(sse + 0.5 * lambda * params.weight_sq_norm())
}

/// Gradient of [`loss`] with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b: Array1<f64>,
    pub w2: Array2<f64>,
    pub b_prime: Array1<f64>,
    /// Loss at the point where the gradient was taken.
    pub loss: f64,
}

pub fn gradients(params: &ModelParams, batch: &Batch, lambda: f64) -> Result<Gradients> {
    batch.check(params)?;
    let (hidden, recon) = forward_batch(params, batch.inputs.view());
    let (residual, sse) = masked_error(batch, &recon);
    let loss = sse + 0.5 * lambda * params.weight_sq_norm();

    // dL/dr̂ = 2 · mask ⊙ (r̂ − r)
    let out_delta = residual * 2.0;
    let mut w2 = out_delta.t().dot(&hidden);
    w2.scaled_add(lambda, &params.w2);
    let b_prime = out_delta.sum_axis(Axis(0));

    let mut hidden_delta = out_delta.dot(&params.w2);
    Zip::from(&mut hidden_delta)
        .and(&hidden)
        .for_each(|d, &h| *d *= h * (1.0 - h));
    let mut w1 = hidden_delta.t().dot(&batch.inputs);
    w1.scaled_add(lambda, &params.w1);
    let b = hidden_delta.sum_axis(Axis(0));

    Ok(Gradients {
        w1,
        b,
        w2,
        b_prime,
        loss,
    })
}

/// Copies the rating-block columns of an explainable model's `W1` into a
/// baseline model with otherwise identical parameters.
pub fn rating_block(params: &ModelParams) -> Result<ModelParams> {
    if params.variant != Variant::Explainable || params.combine != InputCombine::Concat {
        return Err(Error::Config("rating block is defined for concatenated E-AutoRec only".into()));
    }
    let n = params.num_items();
    Ok(ModelParams {
        variant: Variant::Baseline,
        combine: InputCombine::Concat,
        w1: params.w1.slice(s![.., ..n]).to_owned(),
        b: params.b.clone(),
        w2: params.w2.clone(),
        b_prime: params.b_prime.clone(),
    })
}
