use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gradients, init_params, Batch, Gradients, ModelParams, Optimizer, TrainConfig, Variant};
use crate::dataset::{DataSplit, RatingMatrix};
use crate::error::{Error, Result};
use crate::metrics;
use crate::neighborhood::ExplainabilityMatrix;

/// Users per forward pass when predicting the full matrix.
const PREDICT_CHUNK: usize = 256;

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Full training objective after the epoch's updates.
    pub train_loss: f64,
    /// Held-out RMSE on the raw 1-5 scale; `None` with an empty test fold.
    pub test_rmse: Option<f64>,
    /// Held-out RMSE on the normalized scale.
    pub test_rmse_normalized: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,test_rmse";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{}",
            self.epoch,
            self.train_loss,
            self.test_rmse.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch gradient descent over users.
///
/// Each epoch shuffles the users that have at least one training rating with
/// an RNG seeded from `config.seed`, then steps once per batch. After every
/// epoch the full objective and test RMSE are computed and passed to `sink`.
pub fn train(
    split: &DataSplit,
    explain: Option<&ExplainabilityMatrix>,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let train = &split.train;
    config.validate(train.num_users())?;
    match (config.variant, explain) {
        (Variant::Baseline, Some(_)) => {
            return Err(Error::Config("baseline training takes no explainability matrix".into()))
        }
        (Variant::Explainable, None) => {
            return Err(Error::Config("explainable training requires an explainability matrix".into()))
        }
        _ => {}
    }

    let mut params = init_params(config, train.num_items(), config.seed)?;
    let mut updater = Updater::new(config, &params);

    let mut users: Vec<usize> = (0..train.num_users()).filter(|&u| train.row_len(u) > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        users.shuffle(&mut rng);
        for (batch_idx, chunk) in users.chunks(config.batch_size).enumerate() {
            let batch = Batch::from_users(&params, train, explain, chunk)?;
            let grad = gradients(&params, &batch, config.lambda)?;
            if !grad.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: grad.loss,
                });
            }
            updater.step(&mut params, &grad);
        }

        let predictions = predict_all(&params, train, explain)?;
        let train_loss = objective(&params, train, &predictions, config.lambda);
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: users.len().div_ceil(config.batch_size),
                loss: train_loss,
            });
        }
        let (test_rmse, test_rmse_normalized) = if split.test.is_empty() {
            (None, None)
        } else {
            (
                Some(metrics::rmse_from_matrix(&predictions, &split.test)?),
                Some(metrics::rmse_normalized_from_matrix(&predictions, &split.test)?),
            )
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            test_rmse,
            test_rmse_normalized,
        };
        log::debug!(
            "{} epoch {epoch}: loss {train_loss:.4}, test rmse {:?}",
            config.variant,
            record.test_rmse
        );
        sink(&record);
        history.push(record);
    }

    Ok(TrainedModel {
        params,
        config: config.clone(),
        history,
    })
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Optimizer state. Moment buffers reuse the parameter layout.
struct Updater {
    optimizer: Optimizer,
    learning_rate: f64,
    momentum: f64,
    first: Option<ModelParams>,
    second: Option<ModelParams>,
    steps: i32,
}

impl Updater {
    fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        let zeros = || ModelParams::zeros(params.variant, params.combine, params.hidden_units(), params.num_items());
        let (first, second) = match config.optimizer {
            Optimizer::Sgd if config.momentum > 0.0 => (Some(zeros()), None),
            Optimizer::Sgd => (None, None),
            Optimizer::Adam => (Some(zeros()), Some(zeros())),
        };
        Updater {
            optimizer: config.optimizer,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            first,
            second,
            steps: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &Gradients) {
        let lr = self.learning_rate;
        self.steps += 1;
        match (self.optimizer, self.first.as_mut(), self.second.as_mut()) {
            (Optimizer::Sgd, None, _) => {
                params.w1.scaled_add(-lr, &grad.w1);
                params.b.scaled_add(-lr, &grad.b);
                params.w2.scaled_add(-lr, &grad.w2);
                params.b_prime.scaled_add(-lr, &grad.b_prime);
            }
            (Optimizer::Sgd, Some(v), _) => {
                let mu = self.momentum;
                let momentum_step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
                    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v - lr * g;
                        *p += *v;
                    }
                };
                momentum_step(slice(&mut params.w1), slice(&mut v.w1), grad.w1.as_slice().unwrap());
                momentum_step(slice(&mut params.b), slice(&mut v.b), grad.b.as_slice().unwrap());
                momentum_step(slice(&mut params.w2), slice(&mut v.w2), grad.w2.as_slice().unwrap());
                momentum_step(slice(&mut params.b_prime), slice(&mut v.b_prime), grad.b_prime.as_slice().unwrap());
            }
            (Optimizer::Adam, Some(m), Some(v)) => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let adam_step = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                    }
                };
                adam_step(slice(&mut params.w1), slice(&mut m.w1), slice(&mut v.w1), grad.w1.as_slice().unwrap());
                adam_step(slice(&mut params.b), slice(&mut m.b), slice(&mut v.b), grad.b.as_slice().unwrap());
                adam_step(slice(&mut params.w2), slice(&mut m.w2), slice(&mut v.w2), grad.w2.as_slice().unwrap());
                adam_step(
                    slice(&mut params.b_prime),
                    slice(&mut m.b_prime),
                    slice(&mut v.b_prime),
                    grad.b_prime.as_slice().unwrap(),
                );
            }
            (Optimizer::Adam, _, _) => unreachable!("adam state is allocated up front"),
        }
    }
}

fn slice<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

/// Masked squared error over every training rating plus the weight penalty.
fn objective(params: &ModelParams, train: &RatingMatrix, predictions: &Array2<f64>, lambda: f64) -> f64 {
    let sse: f64 = train
        .entries()
        .map(|(u, i, v)| {
            let d = predictions[[u, i]] - v;
            d * d
        })
        .sum();
    sse + 0.5 * lambda * params.weight_sq_norm()
}

/// Predicted `m × n` matrix on the normalized scale, unclipped. Row `u` is the
/// reconstruction of user `u`'s training ratings.
pub fn predict_all(
    params: &ModelParams,
    train: &RatingMatrix,
    explain: Option<&ExplainabilityMatrix>,
) -> Result<Array2<f64>> {
    let (m, n) = (train.num_users(), train.num_items());
    let mut out = Array2::zeros((m, n));
    let users: Vec<usize> = (0..m).collect();
    for chunk in users.chunks(PREDICT_CHUNK) {
        let batch = Batch::from_users(params, train, explain, chunk)?;
        let (_, recon) = super::forward_batch(params, batch.inputs.view());
        out.slice_mut(ndarray::s![chunk[0]..chunk[0] + chunk.len(), ..])
            .assign(&recon);
    }
    Ok(out)
}
