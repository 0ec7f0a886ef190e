//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Criteria 4-8 need MovieLens 100K. The rating file is taken from
//! `$MOVIELENS_100K` or `data/ml-100k/u.data` under the workspace root
//! (`scripts/fetch-movielens.sh` downloads it).

mod common;

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use eautorec::autoencoder::{InputCombine, Optimizer, TrainConfig, Variant};
use eautorec::harness::{
    evaluate, explainability_for, prepare, run_sweep, run_theta_sweep, train_variant, write_report,
    ExperimentSpec, Prepared, SweepAxis,
};
use eautorec::metrics::{map_at_n, mep_at_n, rmse, top_n, TopNList};
use eautorec::neighborhood::{build_explainability_matrix_with, ExplainabilityMatrix, StorageKind};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_oracle() -> Outcome {
    let combos = [
        (Variant::Baseline, InputCombine::Concat),
        (Variant::Explainable, InputCombine::Concat),
        (Variant::Explainable, InputCombine::Sum),
    ];
    let lambdas = [0.0, 0.01, 1.0];
    let instances = 120;
    let mut worst = 0.0f64;
    for case in 0..instances {
        let mut rng = rng(1000 + case as u64);
        let (variant, combine) = combos[case % 3];
        let lambda = lambdas[(case / 3) % 3];
        let (m, n, k) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let params = random_params(&mut rng, variant, combine, k, n);
        let data = RandomBatch::new(&mut rng, m, n);
        worst = worst.max(max_gradient_error(&params, &data, lambda));
    }
    outcome(
        worst < GRAD_CHECK_TOLERANCE,
        format!("{instances} instances, max relative error {worst:.2e} (tolerance {GRAD_CHECK_TOLERANCE:e})"),
    )
}

fn explainability_oracle() -> Outcome {
    let matrices = 60;
    let mut mismatches = 0;
    for case in 0..matrices {
        let mut rng = rng(2000 + case as u64);
        let (m, n) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        let size = rng.gen_range(1..=5);
        let theta = [0.0, 1.0, 2.0, 3.0][case % 4];
        let density = rng.gen_range(0.1..0.9);
        let raw = random_raw_matrix(&mut rng, m, n, density);
        let train = to_rating_matrix(&raw);
        let want = oracle_explainability(&raw, size, theta);
        for storage in [StorageKind::Dense, StorageKind::Sparse] {
            let e = build_explainability_matrix_with(&train, size, theta, storage).unwrap();
            if (0..m).any(|u| e.row(u) != want[u]) {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{matrices} matrices × dense/sparse, {mismatches} differ from the brute force"),
    )
}

fn metric_oracles() -> Outcome {
    let fixtures = 300;
    let (mut rmse_err, mut mep_err, mut map_err) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..fixtures {
        let f = metric_fixture(3000 + seed);
        let (m, n) = (f.scores.len(), f.scores[0].len());
        if !f.test.is_empty() {
            let pred = |u: usize, i: usize| f.scores[u][i] * 6.0 - 0.5;
            let pairs: Vec<(f64, f64)> = f.test.iter().map(|t| (t.rating as f64, pred(t.user, t.item))).collect();
            rmse_err = rmse_err.max((rmse(&f.test, pred).unwrap() - oracle_rmse(&pairs)).abs());
        }
        let e = ExplainabilityMatrix::from_entries(m, n, 0.0, 5, f.explain.clone(), StorageKind::Sparse).unwrap();
        let explainable: HashSet<(usize, usize)> = f.explain.iter().map(|&(u, i, _)| (u, i)).collect();
        let lists: Vec<TopNList> = (0..m).map(|u| top_n(u, &f.scores[u], &f.rated[u], 10).unwrap()).collect();
        for n_top in 1..=10 {
            let cut: Vec<(usize, Vec<usize>)> = (0..m)
                .map(|u| (u, oracle_top_n(&f.scores[u], &f.rated[u], n_top)))
                .collect();
            mep_err = mep_err.max((mep_at_n(&lists, &e, n_top) - oracle_mep(&cut, &explainable)).abs());
            let map = map_at_n(&lists, &f.test, n_top, 4).unwrap();
            map_err = map_err.max((map - oracle_map(&cut, &f.test, n_top, 4)).abs());
        }
    }
    let tol = 1e-12;
    outcome(
        rmse_err <= tol && mep_err <= tol && map_err <= tol,
        format!("{fixtures} fixtures, max |Δ| rmse {rmse_err:.1e} mep {mep_err:.1e} map {map_err:.1e}"),
    )
}

fn movielens_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("MOVIELENS_100K") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    p.exists().then_some(p)
}

/// Fixed parameters of the MovieLens runs: 90/10 split, k = 300, θ = 0,
/// |N_u| = 50, Adam.
fn movielens_spec(data: PathBuf) -> ExperimentSpec {
    ExperimentSpec {
        data,
        split_seed: 0,
        test_fraction: 0.1,
        train: TrainConfig {
            hidden_units: 300,
            lambda: 1.0,
            learning_rate: 3e-4,
            optimizer: Optimizer::Adam,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            theta: 0.0,
            neighborhood_size: 50,
            ..TrainConfig::default()
        },
        ..ExperimentSpec::default()
    }
}

fn fmt(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

struct MovieLens {
    fig3: Outcome,
    fig4: Outcome,
    fig6: Outcome,
    floor: Outcome,
}

fn movielens(spec: &ExperimentSpec, data: &Prepared) -> MovieLens {
    let explain = explainability_for(&data.split, &spec.train).unwrap();
    let ns = [5, 10, 20, 50];
    let mut curves = Vec::new();
    let mut meps = Vec::new();
    let mut finals = Vec::new();
    for variant in [Variant::Baseline, Variant::Explainable] {
        let t = Instant::now();
        let model = train_variant(&data.split, &explain, &spec.train, variant).unwrap();
        let eval = evaluate(&data.split, &model, &explain, 50).unwrap();
        let curve: Vec<f64> = model.history.iter().map(|r| r.test_rmse.unwrap()).collect();
        let mep: Vec<f64> = ns.iter().map(|&n| eval.mep_at(&explain, n)).collect();
        let map: Vec<f64> = ns.iter().map(|&n| eval.map_at(&data.split, n, 4).unwrap()).collect();
        println!(
            "  {variant}: trained in {:.0?}, rmse first10 [{}] final {:.4}, MEP@{ns:?} [{}], MAP [{}]",
            t.elapsed(),
            fmt(&curve[..10]),
            eval.test_rmse,
            fmt(&mep),
            fmt(&map)
        );
        curves.push(curve);
        meps.push(mep);
        finals.push(eval.test_rmse);
    }

    let decreasing = |c: &[f64]| c[..10].windows(2).all(|w| w[1] < w[0]);
    let fig3 = outcome(
        decreasing(&curves[0]) && decreasing(&curves[1]) && finals[1] <= finals[0] + 0.01,
        format!(
            "first 10 epochs strictly decreasing: autorec {} e-autorec {}; final rmse {:.4} vs {:.4} + 0.01",
            decreasing(&curves[0]),
            decreasing(&curves[1]),
            finals[1],
            finals[0]
        ),
    );

    let e_above = (0..4).all(|j| meps[1][j] > meps[0][j]);
    let grows = meps.iter().all(|m| m[3] > m[2]);
    let fig4 = outcome(
        e_above && grows,
        format!(
            "MEP e-autorec > autorec at every n: {e_above}; MEP@50 > MEP@20 for both: {grows} \
             (autorec {:.4}/{:.4}, e-autorec {:.4}/{:.4})",
            meps[0][2], meps[0][3], meps[1][2], meps[1][3]
        ),
    );

    let floor = outcome(
        finals[0] <= data.global_mean_rmse - 0.05,
        format!("autorec rmse {:.4} vs global mean {:.4} - 0.05", finals[0], data.global_mean_rmse),
    );

    let theta_spec = ExperimentSpec {
        sweep: SweepAxis::Theta,
        values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        n_top: 10,
        ..spec.clone()
    };
    let t = Instant::now();
    let report = run_theta_sweep(&theta_spec, data).unwrap();
    let mut by_variant = [Vec::new(), Vec::new()];
    for row in &report.rows {
        let f: Vec<&str> = row.split(',').collect();
        let slot = if f[2] == Variant::Baseline.name() { 0 } else { 1 };
        by_variant[slot].push(f[4].parse::<f64>().unwrap());
    }
    println!(
        "  theta sweep in {:.0?}: MEP@10 autorec [{}], e-autorec [{}]",
        t.elapsed(),
        fmt(&by_variant[0]),
        fmt(&by_variant[1])
    );
    let non_increasing = by_variant.iter().all(|m| m.windows(2).all(|w| w[1] <= w[0]));
    let above = by_variant[1].iter().zip(&by_variant[0]).all(|(e, a)| e > a);
    let fig6 = outcome(
        non_increasing && above,
        format!("MEP@10 non-increasing in θ for both: {non_increasing}; e-autorec above autorec at each θ: {above}"),
    );

    MovieLens {
        fig3,
        fig4,
        fig6,
        floor,
    }
}

/// Runs every sweep axis twice with a reduced budget and compares the CSV
/// files byte for byte.
fn determinism(spec: &ExperimentSpec, data: &Prepared) -> Outcome {
    let small = TrainConfig {
        hidden_units: 16,
        epochs: 2,
        ..spec.train.clone()
    };
    let axes = [
        (SweepAxis::Epochs, vec![1.0, 2.0]),
        (SweepAxis::NTop, vec![5.0, 10.0, 20.0, 50.0]),
        (SweepAxis::HiddenUnits, vec![8.0, 16.0]),
        (SweepAxis::NeighborhoodSize, vec![10.0, 50.0]),
        (SweepAxis::Theta, vec![0.0, 2.0, 4.0]),
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        for (axis, values) in &axes {
            let s = ExperimentSpec {
                sweep: *axis,
                values: values.clone(),
                train: small.clone(),
                ..spec.clone()
            };
            write_report(dir.path(), &run_sweep(&s, data).unwrap()).unwrap();
        }
    }
    let files = ["fig3_rmse_vs_epochs.csv", "fig4_topn.csv", "fig5_hidden.csv", "fig6_neighbors_theta.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap())
        .collect();
    outcome(
        differing.is_empty(),
        format!("5 sweep axes run twice, {} of {} files differ {differing:?}", differing.len(), files.len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient oracle", gradient_oracle()),
        ("2 explainability oracle", explainability_oracle()),
        ("3 metric oracles", metric_oracles()),
    ];

    let names = [
        "4 rmse vs epochs",
        "5 MEP vs list length",
        "6 MEP vs theta",
        "7 sanity floor",
        "8 sweep determinism",
    ];
    match movielens_path() {
        Some(path) => {
            let spec = movielens_spec(path);
            let data = prepare(&spec).expect("MovieLens 100K loads");
            println!(
                "MovieLens: {} users, {} items, {} train / {} test, global-mean rmse {:.4}",
                data.split.num_users(),
                data.split.num_items(),
                data.split.train.nnz(),
                data.split.test.len(),
                data.global_mean_rmse
            );
            let ml = movielens(&spec, &data);
            results.push((names[0], ml.fig3));
            results.push((names[1], ml.fig4));
            results.push((names[2], ml.fig6));
            results.push((names[3], ml.floor));
            results.push((names[4], determinism(&spec, &data)));
        }
        None => {
            for name in names {
                let detail = "MovieLens 100K not found: set MOVIELENS_100K or run scripts/fetch-movielens.sh".into();
                results.push((name, outcome(false, detail)));
            }
        }
    }

    println!();
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
