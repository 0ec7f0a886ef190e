use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eautorec::autoencoder::{Checkpoint, EpochRecord, TrainConfig, TrainedModel, Variant};
use eautorec::dataset::{parse_ratings_file, split, DataSplit};
use eautorec::harness::{
    evaluate, explain_recommendation, explainability_for, prepare, run_sweep, write_report, ExperimentSpec,
    SweepAxis,
};
use eautorec::neighborhood::{ExplainabilityMatrix, StorageKind};

/// AutoRec and explainable AutoRec experiments on explicit ratings.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and split the ratings, then write the split manifest and the
    /// explainability matrix cache.
    Prepare(Common),
    /// Train one or both variants and write checkpoints and per-epoch logs.
    Train(Common),
    /// Score a checkpoint on its held-out ratings.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the experiment's sweep and write its figure CSV.
    Sweep(Common),
    /// Explain a recommendation with the neighbor ratings behind it.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// External user id.
        #[arg(long)]
        user: u32,
        /// External item id.
        #[arg(long)]
        item: u32,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML). Flags below override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Rating file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Base seed for model initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one variant: autorec or e-autorec.
    #[arg(long)]
    variant: Option<Variant>,
    /// Sweep axis: epochs, n_top, hidden_units, neighborhood_size or theta.
    #[arg(long)]
    sweep: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Explainability matrix written by `prepare`, reused instead of rebuilt.
    #[arg(long)]
    explain_cache: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentSpec::default(),
        };
        if let Some(data) = &self.data {
            spec.data = data.clone();
        }
        if let Some(seed) = self.seed {
            spec.train.seed = seed;
        }
        if let Some(variant) = self.variant {
            spec.variants = vec![variant];
        }
        if let Some(axis) = self.sweep {
            if axis != spec.sweep {
                spec.values.clear();
            }
            spec.sweep = axis;
        }
        if let Some(values) = &self.values {
            spec.values = values.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    fn explainability(&self, data: &DataSplit, config: &TrainConfig) -> Result<ExplainabilityMatrix> {
        let Some(path) = &self.explain_cache else {
            return Ok(explainability_for(data, config)?);
        };
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let e = ExplainabilityMatrix::read_csv(&data.train, BufReader::new(file), StorageKind::Dense)
            .with_context(|| format!("reading {}", path.display()))?;
        if e.neighborhood_size() != config.neighborhood_size || e.theta() != config.theta {
            bail!(
                "{} was built with neighborhood_size={} theta={}, but the run needs neighborhood_size={} theta={}",
                path.display(),
                e.neighborhood_size(),
                e.theta(),
                config.neighborhood_size,
                config.theta
            );
        }
        Ok(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(&common.out_dir)
}

fn cmd_prepare(common: &Common) -> Result<()> {
    let spec = common.spec()?;
    let data = prepare(&spec)?;
    let dir = out_dir(common)?;

    let manifest = dir.join("split.csv");
    let mut out = create(&manifest)?;
    data.split.write_manifest(&mut out)?;
    out.flush()?;

    let cache = dir.join("explainability.csv");
    let e = explainability_for(&data.split, &spec.train)?;
    let mut out = create(&cache)?;
    e.write_csv(&data.split.train, &mut out)?;
    out.flush()?;

    println!(
        "users={} items={} train={} test={} explainable_entries={} global_mean_rmse={:.4}",
        data.split.num_users(),
        data.split.num_items(),
        data.split.train.nnz(),
        data.split.test.len(),
        e.nonzero_count(),
        data.global_mean_rmse
    );
    println!("wrote {}", manifest.display());
    println!("wrote {}", cache.display());
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let spec = common.spec()?;
    let data = prepare(&spec)?;
    let dir = out_dir(common)?;
    let e = common.explainability(&data.split, &spec.train)?;
    for &variant in &spec.variants {
        let config = TrainConfig {
            variant,
            ..spec.train.clone()
        };
        let log_path = dir.join(format!("{variant}_progress.csv"));
        let mut log = create(&log_path)?;
        writeln!(log, "{}", EpochRecord::CSV_HEADER)?;
        let mut write_err = None;
        let explain = (variant == Variant::Explainable).then_some(&e);
        let model = eautorec::autoencoder::train(&data.split, explain, &config, &mut |r| {
            if let Err(err) = writeln!(log, "{}", r.csv_row()) {
                write_err.get_or_insert(err);
            }
            eprintln!("{variant} epoch {} loss {:.4} test_rmse {:.4}", r.epoch, r.train_loss, r.test_rmse.unwrap_or(f64::NAN));
        })?;
        if let Some(err) = write_err {
            return Err(err).with_context(|| format!("writing {}", log_path.display()));
        }
        log.flush()?;
        let ckpt_path = dir.join(format!("{variant}.ckpt"));
        checkpoint(&model, &data.split).save(&ckpt_path)?;
        println!("wrote {}", ckpt_path.display());
        println!("wrote {}", log_path.display());
    }
    Ok(())
}

fn checkpoint(model: &TrainedModel, data: &DataSplit) -> Checkpoint {
    Checkpoint {
        params: model.params.clone(),
        config: model.config.clone(),
        epochs_trained: model.history.len(),
        split_seed: data.split_seed,
        test_fraction: data.test_fraction,
    }
}

/// Loads a checkpoint and rebuilds the split it was trained on.
fn restore(common: &Common, path: &Path) -> Result<(ExperimentSpec, Checkpoint, DataSplit, ExplainabilityMatrix)> {
    let spec = common.spec()?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let ratings = parse_ratings_file(&spec.data, spec.format)?;
    let data = split(&ratings, ckpt.test_fraction, ckpt.split_seed)?;
    if data.num_items() != ckpt.params.num_items() {
        bail!(
            "checkpoint expects {} items but {} has {}",
            ckpt.params.num_items(),
            spec.data.display(),
            data.num_items()
        );
    }
    let e = common.explainability(&data, &ckpt.config)?;
    Ok((spec, ckpt, data, e))
}

fn cmd_evaluate(common: &Common, path: &Path) -> Result<()> {
    let (spec, ckpt, data, e) = restore(common, path)?;
    let model = TrainedModel {
        params: ckpt.params,
        config: ckpt.config,
        history: Vec::new(),
    };
    let eval = evaluate(&data, &model, &e, spec.n_top)?;
    println!("variant,test_rmse,n_top,map,mep");
    println!(
        "{},{},{},{},{}",
        model.config.variant,
        eval.test_rmse,
        spec.n_top,
        eval.map_at(&data, spec.n_top, spec.relevance_threshold)?,
        eval.mep_at(&e, spec.n_top)
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let spec = common.spec()?;
    let data = prepare(&spec)?;
    let report = run_sweep(&spec, &data)?;
    let path = write_report(out_dir(common)?, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_explain(common: &Common, path: &Path, user: u32, item: u32) -> Result<()> {
    let (_, ckpt, data, e) = restore(common, path)?;
    let explanation = explain_recommendation(user, item, &data.train, &e, &ckpt.params)?;
    println!("{explanation}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare(common) => cmd_prepare(common),
        Command::Train(common) => cmd_train(common),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(common, checkpoint),
        Command::Sweep(common) => cmd_sweep(common),
        Command::Explain {
            common,
            checkpoint,
            user,
            item,
        } => cmd_explain(common, checkpoint, *user, *item),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
