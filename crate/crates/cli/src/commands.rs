use std::time::Instant;

use fimlab::fim::{Estimator, LocalModel};
use fimlab::linalg::eigvalsh;
use fimlab::montecarlo::{self, FitConfig, MCConfig};
use fimlab::spectrum::{min_eig_bound, psd_probability_bound, spectrum_report};
use fimlab::variance::{self, BoundReport};
use fimlab::{FamilyKind, FamilyModel, Limits};
use ndarray::{Array1, Array2};
use serde_json::json;

use crate::args::{Command, EstimatorArg, ModelArgs, OutArgs, SampleArgs, TrialArgs};
use crate::config::{build_model, Model, NetworkFile};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Manifest, OutputDir, OutputEntry, Table};

pub fn estimator(sample: &SampleArgs) -> CliResult<Estimator> {
    Ok(match sample.estimator {
        EstimatorArg::One => Estimator::One,
        EstimatorArg::Two => Estimator::Two,
        EstimatorArg::Combined => Estimator::combined(sample.alpha)?,
    })
}

fn mc_config(model: &Model, sample: &SampleArgs, trials: &TrialArgs, threads: Option<usize>) -> CliResult<MCConfig> {
    Ok(MCConfig {
        estimator: estimator(sample)?,
        samples: sample.samples,
        trials: trials.trials,
        seed: model.master_seed,
        eps: trials.eps.clone(),
        z_tolerance: trials.z_tol,
        threads,
    })
}

/// `i,j,value` rows with flat parameter indices.
pub fn matrix_table(m: &Array2<f64>, idx: &[usize]) -> Table {
    let mut t = Table::new(&["i", "j", "value"]);
    for ((a, b), &v) in m.indexed_iter() {
        t.push(vec![idx[a].into(), idx[b].into(), v.into()]);
    }
    t
}

/// Five mean parameters inside each family's domain.
pub fn default_grid(kind: FamilyKind) -> Vec<f64> {
    match kind {
        FamilyKind::BernoulliFactorized => vec![0.1, 0.3, 0.5, 0.7, 0.9],
        FamilyKind::NormalUnitVarianceFactorized => vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        _ => vec![0.5, 1.0, 2.0, 5.0, 10.0],
    }
}

fn family_table(family: &str, grid: Option<&[f64]>) -> CliResult<Table> {
    let kind: FamilyKind = family.parse()?;
    if !kind.is_factorized() {
        return Err(CliError::Config(format!(
            "family table covers bernoulli, normal and poisson, not {kind}"
        )));
    }
    let grid = grid.map_or_else(|| default_grid(kind), <[f64]>::to_vec);
    let mut t = Table::new(&["mean_param", "h", "F", "d2F", "d4F", "K", "K_minus_Var2", "note"]);
    for m in grid {
        match FamilyModel::table_row(kind, m) {
            Ok(r) => t.push(vec![
                r.mean_param.into(),
                r.h.into(),
                r.f.into(),
                r.d2f.into(),
                r.d4f.into(),
                r.k.into(),
                r.k_minus_var2.into(),
                Cell::Empty,
            ]),
            Err(e) => {
                eprintln!("warning: skipping mean parameter {m}: {e}");
                let mut row = vec![Cell::Float(m)];
                row.extend(std::iter::repeat_n(Cell::Empty, 6));
                row.push(format!("skipped: {e}").into());
                t.push(row);
            }
        }
    }
    Ok(t)
}

fn bound_row(r: &BoundReport, idx: Option<[usize; 4]>) -> Vec<Cell> {
    let mut row = vec![Cell::Text(r.kind.name().to_string())];
    match idx {
        Some(ix) => row.extend(ix.iter().map(|&i| Cell::from(i))),
        None => row.extend(std::iter::repeat_n(Cell::Empty, 4)),
    }
    row.extend([
        r.lhs.into(),
        r.rhs.into(),
        r.slack.into(),
        r.ratio().into(),
        r.holds(1e-9).into(),
    ]);
    row
}

pub fn bounds_table(local: &LocalModel<f64>, which: Estimator, n: usize) -> CliResult<Table> {
    let mut t = Table::new(&["kind", "i", "j", "k", "l", "lhs", "rhs", "slack", "ratio", "holds"]);
    let idx = local.subset().indices();
    t.push(bound_row(&variance::bound_frobenius(which, local, n)?, None));
    if local.limits().check_tensor(idx.len()).is_ok() {
        t.push(bound_row(&variance::bound_linf(which, local, n)?, None));
    }
    for i in 0..idx.len() {
        for j in 0..idx.len() {
            let r = variance::bound_elementwise(which, [i, j, i, j], local, n)?;
            t.push(bound_row(&r, Some([idx[i], idx[j], idx[i], idx[j]])));
        }
    }
    let (k, fim) = variance::bound_moments(local.moments());
    t.push(bound_row(&k, None));
    t.push(bound_row(&fim, None));
    Ok(t)
}

fn network_for(model: &ModelArgs, inline: Option<&NetworkFile>) -> CliResult<NetworkFile> {
    match (inline, &model.config) {
        (Some(n), _) => Ok(n.clone()),
        (None, Some(path)) => NetworkFile::load(path),
        (None, None) => Err(CliError::Usage("--config is required".into())),
    }
}

/// Runs one command; `inline` replaces the config file on replay.
pub fn run(cmd: &Command, inline: Option<&NetworkFile>) -> CliResult<Vec<OutputEntry>> {
    let started = Instant::now();
    let (network, model) = match cmd.model_args() {
        Some(args) => {
            let file = network_for(args, inline)?;
            let model = build_model(&file, args)?;
            (Some(file), Some(model))
        }
        None => (None, None),
    };
    let out_args: &OutArgs = match cmd {
        Command::Replay { .. } => return Err(CliError::Usage("a manifest cannot record a replay".into())),
        Command::FamilyTable { out, .. }
        | Command::Exact { out, .. }
        | Command::Estimate { out, .. }
        | Command::Variance { out, .. }
        | Command::Bounds { out, .. }
        | Command::Spectrum { out, .. }
        | Command::Trials { out, .. }
        | Command::Convergence { out, .. }
        | Command::Distance { out, .. }
        | Command::Ratios { out, .. } => out,
    };
    let mut out = OutputDir::create(&out_args.out, out_args.format)?;
    let threads = out_args.threads;
    let m = || model.as_ref().expect("model commands build a model");

    match cmd {
        Command::FamilyTable { family, grid, .. } => {
            out.table("family_table", &family_table(family, grid.as_deref())?)?;
        }
        Command::Exact { .. } => {
            let m = m();
            let fim = m.local.exact_fim();
            out.table("fim_exact", &matrix_table(fim.values(), m.subset.indices()))?;
        }
        Command::Estimate { sample, trial, .. } => {
            let m = m();
            let batch = m.local.draw_batch(sample.samples, m.master_seed, *trial)?;
            let est = m.local.estimate(estimator(sample)?, &batch)?;
            out.table("fim_estimate", &matrix_table(est.values(), m.subset.indices()))?;
        }
        Command::Variance { sample, .. } => {
            let m = m();
            let which = estimator(sample)?;
            let var = variance::var_direct(which, &m.local, sample.samples)?;
            out.table("variance", &matrix_table(&var.values, m.subset.indices()))?;
            if m.local.limits().check_tensor(m.subset.len()).is_ok() {
                let cov = variance::cov_for(which, &m.local, sample.samples)?;
                let idx = m.subset.indices();
                let mut t = Table::new(&["i", "j", "k", "l", "value"]);
                for ((a, b, c, d), &v) in cov.values().indexed_iter() {
                    t.push(vec![idx[a].into(), idx[b].into(), idx[c].into(), idx[d].into(), v.into()]);
                }
                out.table("covariance", &t)?;
            } else {
                eprintln!(
                    "note: covariance tensor skipped, subset of {} exceeds the cap {}",
                    m.subset.len(),
                    Limits::default().max_tensor_subset
                );
            }
        }
        Command::Bounds { sample, .. } => {
            let m = m();
            out.table("bounds", &bounds_table(&m.local, estimator(sample)?, sample.samples)?)?;
        }
        Command::Spectrum { sample, trial, .. } => {
            let m = m();
            let exact = m.local.exact_fim().into_values();
            let batch = m.local.draw_batch(sample.samples, m.master_seed, *trial)?;
            let est = m.local.estimate(estimator(sample)?, &batch)?.into_values();
            let est2 = m.local.estimate_fim2(&batch)?.into_values();
            let mut t = Table::new(&["matrix", "index", "eigenvalue"]);
            for (name, mat) in [("exact", &exact), ("estimate", &est), ("estimate2", &est2)] {
                for (k, v) in eigvalsh(mat).iter().enumerate() {
                    t.push(vec![name.into(), k.into(), (*v).into()]);
                }
            }
            out.table("eigenvalues", &t)?;
            let summary = json!({
                "exact": spectrum_report(&exact, Some(m.local.hess()))?,
                "estimate": spectrum_report(&est, None)?,
                "estimate2": spectrum_report(&est2, None)?,
                "psd_probability_bound": psd_probability_bound(&m.local, sample.samples)?,
                "min_eig_bound": min_eig_bound(&m.local, &batch),
                "samples": sample.samples,
                "master_seed": m.master_seed,
                "trial": trial,
            });
            out.json("spectrum", &summary)?;
        }
        Command::Trials { sample, trials, .. } => {
            let m = m();
            let cfg = mc_config(m, sample, trials, threads)?;
            let s = montecarlo::run_trials(&m.local, &cfg)?;
            let mut t = Table::new(&[
                "trial",
                "frobenius_error",
                "lambda_min",
                "psd_flag",
                "distance_12",
                "lambda_min_2",
                "min_eig_bound",
            ]);
            for r in &s.trials {
                t.push(vec![
                    r.trial.into(),
                    r.frobenius_error.into(),
                    r.lambda_min.into(),
                    r.psd_flag.into(),
                    r.distance_12.into(),
                    r.lambda_min_2.into(),
                    r.min_eig_bound.into(),
                ]);
            }
            out.table("trials", &t)?;
            out.json("summary", &s.to_json())?;
        }
        Command::Convergence { sample, trials, sweep, .. } => {
            let m = m();
            let cfg = mc_config(m, sample, trials, threads)?;
            let fit = montecarlo::convergence_sweep(&m.local, &cfg, &sweep.ns)?;
            let mut t = Table::new(&["n", "mean_error", "stderr"]);
            for p in &fit.points {
                t.push(vec![p.n.into(), p.mean_error.into(), p.stderr.into()]);
            }
            out.table("convergence", &t)?;
            out.json("convergence_fit", &serde_json::to_value(&fit).expect("serializable"))?;
        }
        Command::Distance { sample, trials, sweep, .. } => {
            let m = m();
            let cfg = mc_config(m, sample, trials, threads)?;
            let curve = montecarlo::distance_curve(&m.local, &cfg, &sweep.ns)?;
            let mut t = Table::new(&["n", "mean_distance", "stderr"]);
            for p in &curve.points {
                t.push(vec![p.n.into(), p.mean_distance.into(), p.stderr.into()]);
            }
            out.table("distance", &t)?;
            out.json("distance_trend", &serde_json::to_value(&curve).expect("serializable"))?;
        }
        Command::Ratios {
            sample,
            trials,
            fit_target,
            ..
        } => {
            let m = m();
            let cfg = mc_config(m, sample, trials, threads)?;
            let (local, fit) = match fit_target {
                Some(target) => {
                    let target = Array1::from(target.clone());
                    let fit = montecarlo::fit_to_target(&m.spec, &m.params, &m.x, &target, &FitConfig::default())?;
                    let local = LocalModel::new(&m.spec, &fit.params, &m.x, &m.subset, &Limits::default())?;
                    let info = json!({
                        "target": target.to_vec(),
                        "residual": fit.residual,
                        "iterations": fit.iterations,
                        "converged": fit.converged,
                    });
                    (local, Some(info))
                }
                None => (m.local.clone(), None),
            };
            let report = montecarlo::ratio_histograms(&local, &cfg)?;
            let mut t = Table::new(&["bound", "entry", "ratio"]);
            for s in &report.series {
                for (k, &q) in s.ratios.iter().enumerate() {
                    t.push(vec![s.bound.as_str().into(), k.into(), q.into()]);
                }
            }
            out.table("ratios", &t)?;
            let series: Vec<_> = report
                .series
                .iter()
                .map(|s| {
                    json!({
                        "bound": s.bound,
                        "entries": s.ratios.len(),
                        "excluded": s.excluded,
                        "median": s.median,
                        "max": s.max,
                        "violations": s.violations,
                        "histogram": s.histogram,
                    })
                })
                .collect();
            out.json(
                "ratio_summary",
                &json!({
                    "samples": report.samples,
                    "trials": report.trials,
                    "seed": report.seed,
                    "fit": fit,
                    "series": series,
                }),
            )?;
        }
        Command::Replay { .. } => unreachable!("rejected above"),
    }

    let manifest = Manifest {
        tool: "fimlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.clone(),
        network,
        master_seed: model.as_ref().map(|m| m.master_seed),
        outputs: Vec::new(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    out.finish(manifest)
}

pub fn replay(manifest_path: &std::path::Path, out: Option<&std::path::Path>, threads: Option<usize>) -> CliResult<Vec<OutputEntry>> {
    let manifest = Manifest::load(manifest_path)?;
    let mut cmd = manifest.command;
    let args = cmd
        .out_args_mut()
        .ok_or_else(|| CliError::Config("manifest records a replay".into()))?;
    if let Some(dir) = out {
        args.out = dir.to_path_buf();
    }
    args.threads = threads;
    run(&cmd, manifest.network.as_ref())
}
