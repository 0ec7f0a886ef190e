use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use super::{evaluate, explainability_for, train_variant, ExperimentSpec, Prepared, SweepAxis};
use crate::autoencoder::{TrainConfig, Variant};
use crate::error::{Error, Result};

const CONTEXT_HEADER: &str = "split_seed,test_fraction,hidden_units,neighborhood_size,theta,epochs,optimizer,\
learning_rate,lambda,momentum,batch_size,seed,combine,n_top,relevance_threshold";

/// Rows of one figure's CSV, in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub header: String,
    pub rows: Vec<String>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }
}

/// The fixed-parameter columns echoed on every row.
fn context(spec: &ExperimentSpec, config: &TrainConfig, n_top: usize) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        spec.split_seed,
        spec.test_fraction,
        config.hidden_units,
        config.neighborhood_size,
        config.theta,
        config.epochs,
        config.optimizer,
        config.learning_rate,
        config.lambda,
        config.momentum,
        config.batch_size,
        config.seed,
        config.combine,
        n_top,
        spec.relevance_threshold
    )
}

fn require_axis(spec: &ExperimentSpec, axis: SweepAxis) -> Result<()> {
    if spec.sweep != axis {
        return Err(Error::Config(format!("expected a {axis} sweep, got {}", spec.sweep)));
    }
    spec.validate()
}

fn point_seed(spec: &ExperimentSpec, index: usize) -> u64 {
    spec.train.seed.wrapping_add(index as u64)
}

/// Runs the sweep named by `spec.sweep`.
pub fn run_sweep(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    match spec.sweep {
        SweepAxis::Epochs => run_epoch_curve(spec, data),
        SweepAxis::NTop => run_topn_sweep(spec, data),
        SweepAxis::HiddenUnits => run_hidden_units_sweep(spec, data),
        SweepAxis::NeighborhoodSize => run_neighborhood_sweep(spec, data),
        SweepAxis::Theta => run_theta_sweep(spec, data),
    }
}

/// Test RMSE after each listed epoch. Each variant is trained once for the
/// largest listed epoch count.
pub fn run_epoch_curve(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    require_axis(spec, SweepAxis::Epochs)?;
    let epochs: Vec<usize> = spec.axis_values().iter().map(|&v| v as usize).collect();
    let config = TrainConfig {
        epochs: *epochs.last().unwrap(),
        ..spec.train.clone()
    };
    let explain = explainability_for(&data.split, &config)?;
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        let model = train_variant(&data.split, &explain, &config, variant)?;
        let ctx = context(spec, &model.config, spec.n_top);
        for &e in &epochs {
            let record = &model.history[e - 1];
            let rmse = record.test_rmse.expect("split has test ratings");
            rows.push(format!("{e},{variant},{},{rmse},{ctx}", record.train_loss));
        }
    }
    Ok(SweepReport {
        axis: SweepAxis::Epochs,
        header: format!("epoch,variant,train_loss,test_rmse,{CONTEXT_HEADER}"),
        rows,
    })
}

/// MAP@n and MEP@n for each listed n, one trained model per variant.
pub fn run_topn_sweep(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    require_axis(spec, SweepAxis::NTop)?;
    let ns: Vec<usize> = spec.axis_values().iter().map(|&v| v as usize).collect();
    let max_n = *ns.last().unwrap();
    let explain = explainability_for(&data.split, &spec.train)?;
    let mut rows = Vec::new();
    for &variant in &spec.variants {
        let model = train_variant(&data.split, &explain, &spec.train, variant)?;
        let eval = evaluate(&data.split, &model, &explain, max_n)?;
        for &n in &ns {
            let map = eval.map_at(&data.split, n, spec.relevance_threshold)?;
            let mep = eval.mep_at(&explain, n);
            let ctx = context(spec, &model.config, n);
            rows.push(format!("{n},{variant},{map},{mep},{},{ctx}", eval.test_rmse));
        }
    }
    Ok(SweepReport {
        axis: SweepAxis::NTop,
        header: format!("n_top,variant,map,mep,test_rmse,{CONTEXT_HEADER}"),
        rows,
    })
}

/// Retrains every variant for each hidden-layer size.
pub fn run_hidden_units_sweep(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    require_axis(spec, SweepAxis::HiddenUnits)?;
    let explain = explainability_for(&data.split, &spec.train)?;
    let mut rows = Vec::new();
    for (index, &k) in spec.axis_values().iter().enumerate() {
        let config = TrainConfig {
            hidden_units: k as usize,
            seed: point_seed(spec, index),
            ..spec.train.clone()
        };
        for &variant in &spec.variants {
            let model = train_variant(&data.split, &explain, &config, variant)?;
            let eval = evaluate(&data.split, &model, &explain, spec.n_top)?;
            let map = eval.map_at(&data.split, spec.n_top, spec.relevance_threshold)?;
            let mep = eval.mep_at(&explain, spec.n_top);
            let ctx = context(spec, &model.config, spec.n_top);
            rows.push(format!("{k},{variant},{map},{mep},{},{ctx}", eval.test_rmse));
        }
    }
    Ok(SweepReport {
        axis: SweepAxis::HiddenUnits,
        header: format!("hidden_units,variant,map,mep,test_rmse,{CONTEXT_HEADER}"),
        rows,
    })
}

/// Rebuilds E for each |N_u|, retrains the explainable variant against it and
/// re-scores the baseline's unchanged lists.
pub fn run_neighborhood_sweep(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    require_axis(spec, SweepAxis::NeighborhoodSize)?;
    explainability_sweep(spec, data, |config, v| config.neighborhood_size = v as usize)
}

/// Rebuilds E for each θ, retrains the explainable variant against it and
/// re-scores the baseline's unchanged lists.
pub fn run_theta_sweep(spec: &ExperimentSpec, data: &Prepared) -> Result<SweepReport> {
    require_axis(spec, SweepAxis::Theta)?;
    explainability_sweep(spec, data, |config, v| config.theta = v)
}

fn explainability_sweep(
    spec: &ExperimentSpec,
    data: &Prepared,
    set: impl Fn(&mut TrainConfig, f64),
) -> Result<SweepReport> {
    let axis = spec.sweep;
    let values = spec.axis_values();

    // The baseline never sees E, so one model serves every point.
    let baseline = if spec.variants.contains(&Variant::Baseline) {
        let mut config = spec.train.clone();
        set(&mut config, values[0]);
        let explain = explainability_for(&data.split, &config)?;
        let model = train_variant(&data.split, &explain, &config, Variant::Baseline)?;
        let eval = evaluate(&data.split, &model, &explain, spec.n_top)?;
        Some((model, eval))
    } else {
        None
    };

    let mut rows = Vec::new();
    for (index, &value) in values.iter().enumerate() {
        let mut config = TrainConfig {
            seed: point_seed(spec, index),
            ..spec.train.clone()
        };
        set(&mut config, value);
        let explain = explainability_for(&data.split, &config)?;
        info!("{axis}={value}: {} explainable entries", explain.nonzero_count());
        for &variant in &spec.variants {
            let (config, map, mep, rmse) = match (variant, &baseline) {
                (Variant::Baseline, Some((model, eval))) => {
                    let shown = TrainConfig {
                        seed: model.config.seed,
                        ..config.clone()
                    };
                    let map = eval.map_at(&data.split, spec.n_top, spec.relevance_threshold)?;
                    (shown, map, eval.mep_at(&explain, spec.n_top), eval.test_rmse)
                }
                _ => {
                    let model = train_variant(&data.split, &explain, &config, variant)?;
                    let eval = evaluate(&data.split, &model, &explain, spec.n_top)?;
                    let map = eval.map_at(&data.split, spec.n_top, spec.relevance_threshold)?;
                    (model.config, map, eval.mep_at(&explain, spec.n_top), eval.test_rmse)
                }
            };
            let ctx = context(spec, &config, spec.n_top);
            rows.push(format!("{axis},{value},{variant},{map},{mep},{rmse},{ctx}"));
        }
    }
    Ok(SweepReport {
        axis,
        header: format!("axis,value,variant,map,mep,test_rmse,{CONTEXT_HEADER}"),
        rows,
    })
}

/// Writes the report to its figure file under `dir` and returns the path.
///
/// The neighborhood-size and θ sweeps share a file: rows of the other axis
/// already present are kept, and neighborhood-size rows always come first.
pub fn write_report(dir: impl AsRef<Path>, report: &SweepReport) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(report.axis.file_name());
    let text = match report.axis {
        SweepAxis::NeighborhoodSize | SweepAxis::Theta => {
            let other = if report.axis == SweepAxis::Theta {
                SweepAxis::NeighborhoodSize
            } else {
                SweepAxis::Theta
            };
            let prefix = format!("{other},");
            let kept: Vec<String> = match std::fs::read_to_string(&path) {
                Ok(old) if old.lines().next() == Some(report.header.as_str()) => {
                    old.lines().skip(1).filter(|l| l.starts_with(&prefix)).map(String::from).collect()
                }
                _ => Vec::new(),
            };
            let (first, second) = if report.axis == SweepAxis::NeighborhoodSize {
                (&report.rows, &kept)
            } else {
                (&kept, &report.rows)
            };
            let mut text = String::new();
            writeln!(text, "{}", report.header).unwrap();
            for row in first.iter().chain(second) {
                writeln!(text, "{row}").unwrap();
            }
            text
        }
        _ => report.to_csv(),
    };
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
