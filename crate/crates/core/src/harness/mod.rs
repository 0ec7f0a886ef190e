//! Experiment driver: loads ratings, splits them, builds explainability
//! matrices, trains both model variants and writes one CSV per figure.
//!
//! An experiment is described by a TOML file:
//!
//! ```toml
//! data = "data/ml-100k/u.data"
//! format = "tab"            # or "csv"
//! split_seed = 0
//! test_fraction = 0.1
//! variants = ["baseline", "explainable"]
//! sweep = "n_top"           # epochs | n_top | hidden_units | neighborhood_size | theta
//! values = [5, 10, 20, 50]  # optional, defaults depend on the axis
//! n_top = 10                # list length when n_top is not swept
//! relevance_threshold = 4
//!
//! [train]
//! hidden_units = 300
//! epochs = 50
//! theta = 0.0
//! neighborhood_size = 50
//! ```

mod explain;
mod sweep;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{predict_all, train, TrainConfig, TrainedModel, Variant};
use crate::dataset::{parse_ratings_file, split, DataSplit, InputFormat};
use crate::error::{Error, Result};
use crate::metrics::{map_at_n, mep_at_n, rmse_from_matrix, test_users, top_n_lists, TopNList};
use crate::neighborhood::{build_explainability_matrix, ExplainabilityMatrix};

pub use explain::{explain_recommendation, Explanation};
pub use sweep::{
    run_epoch_curve, run_hidden_units_sweep, run_neighborhood_sweep, run_sweep, run_theta_sweep, run_topn_sweep,
    write_report, SweepReport,
};

/// The parameter a sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epochs,
    #[default]
    NTop,
    HiddenUnits,
    NeighborhoodSize,
    Theta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Epochs => "epochs",
            SweepAxis::NTop => "n_top",
            SweepAxis::HiddenUnits => "hidden_units",
            SweepAxis::NeighborhoodSize => "neighborhood_size",
            SweepAxis::Theta => "theta",
        }
    }

    /// Output file for this axis. The neighborhood-size and θ sweeps share one.
    pub fn file_name(self) -> &'static str {
        match self {
            SweepAxis::Epochs => "fig3_rmse_vs_epochs.csv",
            SweepAxis::NTop => "fig4_topn.csv",
            SweepAxis::HiddenUnits => "fig5_hidden.csv",
            SweepAxis::NeighborhoodSize | SweepAxis::Theta => "fig6_neighbors_theta.csv",
        }
    }

    /// Values used when the experiment file lists none. For `epochs` this is
    /// every epoch up to the configured budget.
    pub fn default_values(self, config: &TrainConfig) -> Vec<f64> {
        match self {
            SweepAxis::Epochs => (1..=config.epochs).map(|e| e as f64).collect(),
            SweepAxis::NTop => vec![5.0, 10.0, 20.0, 50.0],
            SweepAxis::HiddenUnits => vec![50.0, 100.0, 200.0, 300.0, 500.0],
            SweepAxis::NeighborhoodSize => vec![10.0, 25.0, 50.0, 100.0],
            SweepAxis::Theta => vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }

    fn is_integral(self) -> bool {
        self != SweepAxis::Theta
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epochs" => Ok(SweepAxis::Epochs),
            "n_top" | "ntop" => Ok(SweepAxis::NTop),
            "hidden_units" | "k" => Ok(SweepAxis::HiddenUnits),
            "neighborhood_size" | "neighbors" => Ok(SweepAxis::NeighborhoodSize),
            "theta" => Ok(SweepAxis::Theta),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// A declarative experiment: data, split, variants, sweep axis and the fixed
/// parameters every sweep point shares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: PathBuf,
    pub format: InputFormat,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub variants: Vec<Variant>,
    pub sweep: SweepAxis,
    /// Axis values; empty means [`SweepAxis::default_values`].
    pub values: Vec<f64>,
    pub n_top: usize,
    pub relevance_threshold: u8,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: PathBuf::from("data/ml-100k/u.data"),
            format: InputFormat::Tab,
            split_seed: 0,
            test_fraction: 0.1,
            variants: vec![Variant::Baseline, Variant::Explainable],
            sweep: SweepAxis::NTop,
            values: Vec::new(),
            n_top: 10,
            relevance_threshold: crate::metrics::DEFAULT_RELEVANCE_THRESHOLD,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads an experiment file. A relative `data` path is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        if spec.data.is_relative() {
            if let Some(dir) = path.parent() {
                spec.data = dir.join(&spec.data);
            }
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }

    /// The sweep values, falling back to the axis defaults.
    pub fn axis_values(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.sweep.default_values(&self.train)
        } else {
            self.values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.variants.is_empty() {
            return fail("at least one variant is required".into());
        }
        for (a, v) in self.variants.iter().enumerate() {
            if self.variants[..a].contains(v) {
                return fail(format!("variant {v} listed twice"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.n_top == 0 {
            return fail("n_top must be at least 1".into());
        }
        if !(1..=5).contains(&self.relevance_threshold) {
            return fail(format!("relevance_threshold must lie in 1..=5, got {}", self.relevance_threshold));
        }
        let values = self.axis_values();
        if values.is_empty() {
            return fail(format!("no values for sweep axis {}", self.sweep));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return fail(format!("values for {} must be strictly increasing", self.sweep));
        }
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("invalid {} value {v}", self.sweep));
            }
            if self.sweep.is_integral() && (v.fract() != 0.0 || v < 1.0) {
                return fail(format!("{} values must be positive integers, got {v}", self.sweep));
            }
        }
        Ok(())
    }
}

/// Loaded and split data for one experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: DataSplit,
    pub global_mean_rmse: f64,
}

/// Parses the experiment's rating file and splits it.
pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    spec.validate()?;
    let ratings = parse_ratings_file(&spec.data, spec.format)?;
    let split = split(&ratings, spec.test_fraction, spec.split_seed)?;
    let global_mean_rmse = crate::metrics::global_mean_rmse(&split.train, &split.test)?;
    info!(
        "{} ratings: {} users × {} items, {} held out",
        ratings.len(),
        split.num_users(),
        split.num_items(),
        split.test.len()
    );
    Ok(Prepared { split, global_mean_rmse })
}

/// Builds the explainability matrix selected by `config` from training
/// ratings only.
pub fn explainability_for(split: &DataSplit, config: &TrainConfig) -> Result<ExplainabilityMatrix> {
    build_explainability_matrix(&split.train, config.neighborhood_size, config.theta)
}

/// Trains one variant. The explainability matrix is passed to the model only
/// for the explainable variant.
pub fn train_variant(
    split: &DataSplit,
    explain: &ExplainabilityMatrix,
    config: &TrainConfig,
    variant: Variant,
) -> Result<TrainedModel> {
    let config = TrainConfig {
        variant,
        ..config.clone()
    };
    let e = (variant == Variant::Explainable).then_some(explain);
    info!(
        "training {variant}: k={} epochs={} seed={}",
        config.hidden_units, config.epochs, config.seed
    );
    train(split, e, &config, &mut |r| {
        log::debug!("{variant} epoch {} loss {:.4} rmse {:?}", r.epoch, r.train_loss, r.test_rmse)
    })
}

/// Ranked lists for every test user, long enough for `max_n`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub test_rmse: f64,
    pub lists: Vec<TopNList>,
}

impl Evaluation {
    pub fn map_at(&self, split: &DataSplit, n_top: usize, relevance_threshold: u8) -> Result<f64> {
        map_at_n(&self.lists, &split.test, n_top, relevance_threshold)
    }

    pub fn mep_at(&self, explain: &ExplainabilityMatrix, n_top: usize) -> f64 {
        mep_at_n(&self.lists, explain, n_top)
    }
}

/// Predicts every user's row and ranks unrated items for the test users.
pub fn evaluate(
    split: &DataSplit,
    model: &TrainedModel,
    explain: &ExplainabilityMatrix,
    max_n: usize,
) -> Result<Evaluation> {
    let e = (model.params.variant == Variant::Explainable).then_some(explain);
    let predictions = predict_all(&model.params, &split.train, e)?;
    let test_rmse = rmse_from_matrix(&predictions, &split.test)?;
    let lists = top_n_lists(&predictions, &split.train, &test_users(&split.test), max_n)?;
    Ok(Evaluation { test_rmse, lists })
}
