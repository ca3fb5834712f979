//! Monte Carlo validation harness.
//!
//! Trial `r` draws its `N` samples from streams `(seed, r, 0..N)`, so every
//! summary is a pure function of the configuration. Trials run on a rayon
//! pool; results are collected in trial order and reduced sequentially, which
//! makes the output independent of the thread count.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};
use crate::fim::{Estimator, LocalModel};
use crate::linalg::{eigvalsh, frobenius, max_abs};
use crate::network::{self, NetworkSpec, ParamSet};
use crate::spectrum::{min_eig_bound_with, psd_probability_bound, rho_per_output, PsdBound};
use crate::subset::Subset;
use crate::variance::{self, BoundKind};

/// Environment variable that overrides the worker count.
pub const THREADS_ENV: &str = "FIMLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCConfig {
    pub estimator: Estimator,
    /// Samples per estimate (`N`).
    pub samples: usize,
    /// Independent trials (`R`).
    pub trials: usize,
    pub seed: u64,
    /// Chebyshev coverage levels.
    pub eps: Vec<f64>,
    /// Standard errors allowed between empirical and closed-form values.
    pub z_tolerance: f64,
    /// Scheduling only; never affects results, so it is not serialized.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            estimator: Estimator::One,
            samples: 100,
            trials: 1000,
            seed: 0,
            eps: vec![0.1, 0.5],
            z_tolerance: 5.0,
            threads: None,
        }
    }
}

impl MCConfig {
    /// Checks a configuration whose outputs include covariances (`R ≥ 2`).
    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(FimError::InvalidConfig(format!(
                "need at least 2 trials for covariance estimates, got {}",
                self.trials
            )));
        }
        self.validate_sweep()
    }

    /// Checks a configuration for mean-only sweeps, where one trial suffices.
    pub fn validate_sweep(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(FimError::EmptyBatch);
        }
        if self.trials == 0 {
            return Err(FimError::InvalidConfig("need at least one trial".into()));
        }
        if let Estimator::Combined(a) = self.estimator {
            crate::fim::check_alpha(a)?;
        }
        for &e in &self.eps {
            if !(e > 0.0 && e < 1.0) {
                return Err(FimError::EpsOutOfRange(e));
            }
        }
        if self.z_tolerance.is_nan() || self.z_tolerance <= 0.0 {
            return Err(FimError::InvalidConfig("z_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Worker count: explicit value, else `FIMLAB_THREADS`, else rayon's default.
pub fn resolve_threads(explicit: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = explicit {
        return Ok(Some(n.max(1)));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| Some(n.max(1)))
            .map_err(|_| FimError::InvalidConfig(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match resolve_threads(threads)? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| FimError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Seed for sweep point `n`, so that points of a sweep are independent.
fn point_seed(seed: u64, n: usize) -> u64 {
    let mut s = seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    crate::rng::splitmix64(&mut s)
}

/// Per-trial diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// `‖Î − I(θ)‖_F` for the configured estimator.
    pub frobenius_error: f64,
    pub lambda_min: f64,
    pub psd_flag: bool,
    /// `‖Î₁ − Î₂‖_F` on the shared batch.
    pub distance_12: f64,
    pub lambda_min_2: f64,
    pub min_eig_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "layout", content = "values")]
pub enum EmpiricalCov {
    /// Full `P_s⁴` tensor.
    Tensor(Array4<f64>),
    /// Only the `(i,j,i,j)` entries, when the tensor exceeds the cap.
    Pairs(Array2<f64>),
}

impl EmpiricalCov {
    pub fn pairs(&self) -> Array2<f64> {
        match self {
            EmpiricalCov::Tensor(t) => {
                let p = t.len_of(Axis(0));
                Array2::from_shape_fn((p, p), |(i, j)| t[[i, j, i, j]])
            }
            EmpiricalCov::Pairs(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub eps: f64,
    pub radius: f64,
    pub coverage: f64,
    /// One-sided 99% binomial lower limit `1 − ε − 2.326 √(ε(1−ε)/R)`.
    pub required: f64,
}

/// Comparison of empirical and closed-form covariance entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovCheck {
    pub max_abs_z: f64,
    pub entries: usize,
    /// Entries whose closed form and sampling spread are both zero but the
    /// empirical value is not.
    pub zero_variance_mismatches: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub config: MCConfig,
    pub subset: Vec<usize>,
    pub exact: Array2<f64>,
    pub mean_estimate: Array2<f64>,
    pub empirical_cov: EmpiricalCov,
    pub closed_form_cov: EmpiricalCov,
    pub cov_check: CovCheck,
    pub trials: Vec<TrialRecord>,
    pub psd_frequency: f64,
    pub psd_frequency_2: f64,
    pub psd_bound: PsdBound,
    pub min_eig_violations: usize,
    /// Closed-form `lhs/rhs` per bound family (empty for the combined
    /// estimator).
    pub bound_ratios: BTreeMap<String, Vec<f64>>,
    pub coverage: Vec<Coverage>,
    pub mean_frobenius_error: f64,
    pub mean_distance_12: f64,
    /// `‖mean − I(θ)‖_F` against `z (Σ Var / R)^{1/2}`.
    pub bias_norm: f64,
    pub bias_tolerance: f64,
}

impl TrialSummary {
    pub fn frobenius_errors(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.frobenius_error).collect()
    }

    pub fn distances_12(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.distance_12).collect()
    }

    /// Metadata and small arrays, without per-trial rows or tensors.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "subset": self.subset,
            "exact": self.exact,
            "mean_estimate": self.mean_estimate,
            "empirical_var": self.empirical_cov.pairs(),
            "closed_form_var": self.closed_form_cov.pairs(),
            "cov_check": self.cov_check,
            "psd_frequency": self.psd_frequency,
            "psd_frequency_2": self.psd_frequency_2,
            "psd_bound": self.psd_bound,
            "min_eig_violations": self.min_eig_violations,
            "bound_ratios": self.bound_ratios,
            "coverage": self.coverage,
            "mean_frobenius_error": self.mean_frobenius_error,
            "mean_distance_12": self.mean_distance_12,
            "bias_norm": self.bias_norm,
            "bias_tolerance": self.bias_tolerance,
        })
    }
}

/// Fixed-order pairwise sum of equally shaped arrays.
fn pairwise_sum_arrays(items: &[Array2<f64>]) -> Array2<f64> {
    match items.len() {
        0 => unreachable!("non-empty"),
        1 => items[0].clone(),
        n => {
            let (a, b) = items.split_at(n / 2);
            pairwise_sum_arrays(a) + pairwise_sum_arrays(b)
        }
    }
}

fn mean_f64(v: &[f64]) -> f64 {
    crate::linalg::pairwise_sum(v) / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean_f64(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (crate::linalg::pairwise_sum(&dev) / (v.len() - 1) as f64).sqrt()
}

struct TrialOutput {
    record: TrialRecord,
    selected: Array2<f64>,
}

fn run_one(
    local: &LocalModel<f64>,
    cfg: &MCConfig,
    exact: &Array2<f64>,
    rho: &[f64],
    r: u64,
) -> Result<TrialOutput> {
    let batch = local.draw_batch(cfg.samples, cfg.seed, r)?;
    let e1 = local.estimate_fim1(&batch)?.into_values();
    let e2 = local.estimate_fim2(&batch)?.into_values();
    let selected = match cfg.estimator {
        Estimator::One => e1.clone(),
        Estimator::Two => e2.clone(),
        Estimator::Combined(a) => local.estimate_fim_combined(a, &batch)?.into_values(),
    };
    if selected.iter().any(|v| !v.is_finite()) {
        return Err(FimError::NonFinite("sampled estimate"));
    }
    let ev = eigvalsh(&selected);
    let lambda_min = ev.first().copied().unwrap_or(0.0);
    let lambda_max = ev.last().copied().unwrap_or(0.0);
    let ev2 = eigvalsh(&e2);
    let mean = batch.mean();
    let record = TrialRecord {
        trial: r,
        frobenius_error: frobenius(&(&selected - exact)),
        lambda_min,
        psd_flag: lambda_min >= -1e-10 * lambda_max.abs().max(1.0),
        distance_12: frobenius(&(&e1 - &e2)),
        lambda_min_2: ev2.first().copied().unwrap_or(0.0),
        min_eig_bound: min_eig_bound_with(
            rho,
            local.moments().eta.as_slice().expect("contiguous"),
            mean.as_slice().expect("contiguous"),
        ),
    };
    Ok(TrialOutput { record, selected })
}

/// Unbiased covariance of the flattened trial matrices and per-entry
/// standard errors of that covariance. Rows of `x` are trials.
fn empirical_covariance(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let r = x.nrows() as f64;
    // Shift by the first trial first: identical trials then centre to exact zeros.
    let shifted = x - &x.row(0).insert_axis(Axis(0));
    let mean = shifted.mean_axis(Axis(0)).expect("trials");
    let c = &shifted - &mean.view().insert_axis(Axis(0));
    let cov = c.t().dot(&c) / (r - 1.0);
    let sq = c.mapv(|v| v * v);
    // Var of the product (c_p c_q) ≈ E[c_p² c_q²] − cov_pq².
    let m22 = sq.t().dot(&sq) / r;
    let se = Array2::from_shape_fn(cov.dim(), |(p, q)| {
        ((m22[[p, q]] - cov[[p, q]] * cov[[p, q]]).max(0.0) / r).sqrt()
    });
    (cov, se)
}

pub fn run_trials(local: &LocalModel<f64>, cfg: &MCConfig) -> Result<TrialSummary> {
    cfg.validate()?;
    let exact = local.exact_fim().into_values();
    let rho = rho_per_output(local.hess());
    let outputs: Vec<TrialOutput> = in_pool(cfg.threads, || {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|r| run_one(local, cfg, &exact, &rho, r))
            .collect::<Result<Vec<_>>>()
    })??;

    let ps = local.subset().len();
    let r = cfg.trials;
    let matrices: Vec<Array2<f64>> = outputs.iter().map(|o| o.selected.clone()).collect();
    // Mean as first trial plus mean deviation: identical trials reproduce it exactly.
    let deviations: Vec<Array2<f64>> = matrices.iter().map(|m| m - &matrices[0]).collect();
    let mean_estimate = &matrices[0] + &(pairwise_sum_arrays(&deviations) / r as f64);

    let mut flat = Array2::<f64>::zeros((r, ps * ps));
    for (k, m) in matrices.iter().enumerate() {
        flat.row_mut(k).assign(&Array1::from_iter(m.iter().copied()));
    }
    let (cov, se) = empirical_covariance(&flat);
    let fits = local.limits().check_tensor(ps).is_ok();
    let closed_pairs = variance::var_direct(cfg.estimator, local, cfg.samples)?.values;
    let (empirical_cov, closed_form_cov, cov_check) = if fits {
        let closed = variance::cov_for(cfg.estimator, local, cfg.samples)?;
        let closed_flat = closed
            .values()
            .clone()
            .into_shape_with_order((ps * ps, ps * ps))
            .expect("square");
        let check = compare(&cov, &se, &closed_flat, cfg.z_tolerance);
        (
            EmpiricalCov::Tensor(cov.into_shape_with_order((ps, ps, ps, ps)).expect("square")),
            EmpiricalCov::Tensor(closed.values().clone()),
            check,
        )
    } else {
        let pick = |m: &Array2<f64>| Array2::from_shape_fn((ps, ps), |(i, j)| m[[i * ps + j, i * ps + j]]);
        let (emp, s) = (pick(&cov), pick(&se));
        let check = compare(&emp, &s, &closed_pairs, cfg.z_tolerance);
        (EmpiricalCov::Pairs(emp), EmpiricalCov::Pairs(closed_pairs.clone()), check)
    };

    let records: Vec<TrialRecord> = outputs.iter().map(|o| o.record).collect();
    let psd_frequency = records.iter().filter(|t| t.psd_flag).count() as f64 / r as f64;
    let psd_frequency_2 = records
        .iter()
        .filter(|t| t.lambda_min_2 >= -1e-10 * t.lambda_min_2.abs().max(1.0))
        .count() as f64
        / r as f64;
    let min_eig_violations = records
        .iter()
        .filter(|t| t.lambda_min_2 < t.min_eig_bound - 1e-10)
        .count();

    let mut bound_ratios = BTreeMap::new();
    if !matches!(cfg.estimator, Estimator::Combined(_)) {
        for rep in variance::all_bounds(cfg.estimator, local, cfg.samples)? {
            if let Some(q) = rep.ratio() {
                bound_ratios
                    .entry(rep.kind.name().to_string())
                    .or_insert_with(Vec::new)
                    .push(q);
            }
        }
    }

    let errors: Vec<f64> = records.iter().map(|t| t.frobenius_error).collect();
    let var = variance::VarMatrix {
        values: closed_pairs.clone(),
        n_samples: cfg.samples,
        estimator: cfg.estimator,
    };
    let coverage = cfg
        .eps
        .iter()
        .map(|&e| {
            let radius = variance::chebyshev_radius(&var, e)?;
            let hits = errors.iter().filter(|&&x| x <= radius).count();
            Ok(Coverage {
                eps: e,
                radius,
                coverage: hits as f64 / r as f64,
                required: 1.0 - e - 2.326 * (e * (1.0 - e) / r as f64).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total_var: f64 = closed_pairs.iter().sum();
    let distances: Vec<f64> = records.iter().map(|t| t.distance_12).collect();
    Ok(TrialSummary {
        config: cfg.clone(),
        subset: local.subset().indices().to_vec(),
        bias_norm: frobenius(&(&mean_estimate - &exact)),
        bias_tolerance: cfg.z_tolerance * (total_var.max(0.0) / r as f64).sqrt(),
        exact,
        mean_estimate,
        empirical_cov,
        closed_form_cov,
        cov_check,
        psd_bound: psd_probability_bound(local, cfg.samples)?,
        trials: records,
        psd_frequency,
        psd_frequency_2,
        min_eig_violations,
        bound_ratios,
        coverage,
        mean_frobenius_error: mean_f64(&errors),
        mean_distance_12: mean_f64(&distances),
    })
}

fn compare(emp: &Array2<f64>, se: &Array2<f64>, closed: &Array2<f64>, z: f64) -> CovCheck {
    let scale = max_abs(closed).max(max_abs(emp)).max(f64::MIN_POSITIVE);
    let mut max_abs_z = 0.0f64;
    let mut mismatches = 0;
    for ((e, s), c) in emp.iter().zip(se.iter()).zip(closed.iter()) {
        let diff = (e - c).abs();
        if *s <= 1e-13 * scale {
            if *c == 0.0 && diff > 1e-12 * scale.max(1.0) {
                mismatches += 1;
            }
            continue;
        }
        max_abs_z = max_abs_z.max(diff / s);
    }
    CovCheck {
        max_abs_z,
        entries: emp.len(),
        zero_variance_mismatches: mismatches,
        passed: max_abs_z <= z && mismatches == 0,
    }
}

/// Mean error per `N` and the least-squares slope of log error on log `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub mean_error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SlopeFit {
    Fitted {
        slope: f64,
        stderr: f64,
        intercept: f64,
    },
    /// Some mean error is zero, so the log-log fit does not exist.
    Undefined,
}

impl SlopeFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            SlopeFit::Fitted { slope, .. } => Some(*slope),
            SlopeFit::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub estimator: Estimator,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<ConvergencePoint>,
    pub fit: SlopeFit,
}

/// Ordinary least squares `y = a + b x`, returning `(b, se(b), a)`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = mean_f64(x);
    let my = mean_f64(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, se, intercept))
}

fn errors_at(local: &LocalModel<f64>, cfg: &MCConfig, n: usize, exact: &Array2<f64>) -> Result<Vec<(f64, f64)>> {
    let seed = point_seed(cfg.seed, n);
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|r| {
            let batch = local.draw_batch(n, seed, r)?;
            let sel = local.estimate(cfg.estimator, &batch)?.into_values();
            let e1 = local.estimate_fim1(&batch)?.into_values();
            let e2 = local.estimate_fim2(&batch)?.into_values();
            Ok((frobenius(&(&sel - exact)), frobenius(&(&e1 - &e2))))
        })
        .collect()
}

fn checked_sweep(cfg: &MCConfig, n_list: &[usize]) -> Result<()> {
    cfg.validate_sweep()?;
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(FimError::InvalidConfig("sample-size list must be non-empty and positive".into()));
    }
    Ok(())
}

pub fn convergence_sweep(local: &LocalModel<f64>, cfg: &MCConfig, n_list: &[usize]) -> Result<ConvergenceFit> {
    checked_sweep(cfg, n_list)?;
    let exact = local.exact_fim().into_values();
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let errs: Vec<f64> = in_pool(cfg.threads, || errors_at(local, cfg, n, &exact))??
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        points.push(ConvergencePoint {
            n,
            mean_error: mean_f64(&errs),
            stderr: sample_sd(&errs) / (errs.len() as f64).sqrt(),
        });
    }
    let fit = if points.iter().any(|p| p.mean_error <= 0.0) {
        SlopeFit::Undefined
    } else {
        let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.mean_error.ln()).collect();
        match ols(&x, &y) {
            Some((slope, stderr, intercept)) => SlopeFit::Fitted {
                slope,
                stderr,
                intercept,
            },
            None => SlopeFit::Undefined,
        }
    };
    Ok(ConvergenceFit {
        estimator: cfg.estimator,
        trials: cfg.trials,
        seed: cfg.seed,
        points,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistancePoint {
    pub n: usize,
    pub mean_distance: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceCurve {
    pub points: Vec<DistancePoint>,
    /// Mean distance strictly decreases along the sample-size list.
    pub monotone_decreasing: bool,
    /// Log-log slope, undefined when any distance is zero.
    pub fit: SlopeFit,
}

pub fn distance_curve(local: &LocalModel<f64>, cfg: &MCConfig, n_list: &[usize]) -> Result<DistanceCurve> {
    checked_sweep(cfg, n_list)?;
    let exact = local.exact_fim().into_values();
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let d: Vec<f64> = in_pool(cfg.threads, || errors_at(local, cfg, n, &exact))??
            .into_iter()
            .map(|(_, d)| d)
            .collect();
        points.push(DistancePoint {
            n,
            mean_distance: mean_f64(&d),
            stderr: sample_sd(&d) / (d.len() as f64).sqrt(),
        });
    }
    let monotone_decreasing = points.windows(2).all(|w| w[1].mean_distance < w[0].mean_distance);
    let fit = if points.iter().any(|p| p.mean_distance <= 0.0) {
        SlopeFit::Undefined
    } else {
        let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.mean_distance.ln()).collect();
        ols(&x, &y)
            .map(|(slope, stderr, intercept)| SlopeFit::Fitted {
                slope,
                stderr,
                intercept,
            })
            .unwrap_or(SlopeFit::Undefined)
    };
    Ok(DistanceCurve {
        points,
        monotone_decreasing,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// Bin edges on `[0, 1]`; ratios above 1 land in `overflow`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Self {
        let edges: Vec<f64> = (0..=bins).map(|k| k as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        let mut overflow = 0;
        for &v in values {
            if v > 1.0 {
                overflow += 1;
            } else {
                let k = ((v * bins as f64).floor() as usize).min(bins - 1);
                counts[k] += 1;
            }
        }
        Histogram {
            edges,
            counts,
            overflow,
        }
    }
}

/// Empirical-variance-to-bound ratios for one bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSeries {
    pub bound: String,
    pub ratios: Vec<f64>,
    /// `0/0` entries.
    pub excluded: usize,
    pub median: Option<f64>,
    pub max: Option<f64>,
    /// Entries whose ratio exceeds 1 by more than `z` standard errors.
    pub violations: usize,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub samples: usize,
    pub trials: usize,
    pub seed: u64,
    pub series: Vec<RatioSeries>,
}

impl RatioReport {
    pub fn series(&self, bound: BoundKind) -> Option<&RatioSeries> {
        self.series.iter().find(|s| s.bound == bound.name())
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

fn series(bound: BoundKind, pairs: Vec<(f64, f64, f64)>, z: f64) -> RatioSeries {
    let mut ratios = Vec::new();
    let mut excluded = 0;
    let mut violations = 0;
    for (emp, se, rhs) in pairs {
        match variance::ratio(emp, rhs) {
            Some(q) => {
                if emp - z * se > rhs * (1.0 + 1e-9) {
                    violations += 1;
                }
                ratios.push(q);
            }
            None => excluded += 1,
        }
    }
    RatioSeries {
        bound: bound.name().to_string(),
        median: median(&ratios),
        max: ratios.iter().copied().reduce(f64::max),
        histogram: Histogram::of(&ratios, 20),
        ratios,
        excluded,
        violations,
    }
}

/// Ratios of empirical (Monte Carlo) variances to the element-wise, Frobenius
/// and L∞ bounds of both estimators.
pub fn ratio_histograms(local: &LocalModel<f64>, cfg: &MCConfig) -> Result<RatioReport> {
    cfg.validate()?;
    let ps = local.subset().len();
    let r = cfg.trials;
    let pairs: Vec<(Array2<f64>, Array2<f64>)> = in_pool(cfg.threads, || {
        (0..r as u64)
            .into_par_iter()
            .map(|k| {
                let b = local.draw_batch(cfg.samples, cfg.seed, k)?;
                Ok((
                    local.estimate_fim1(&b)?.into_values(),
                    local.estimate_fim2(&b)?.into_values(),
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let fits = local.limits().check_tensor(ps).is_ok();
    let mut out = Vec::new();
    for (which, kinds) in [
        (Estimator::One, [BoundKind::Elementwise1, BoundKind::Frobenius1, BoundKind::Linf1]),
        (Estimator::Two, [BoundKind::Elementwise2, BoundKind::Frobenius2, BoundKind::Linf2]),
    ] {
        let mut flat = Array2::<f64>::zeros((r, ps * ps));
        for (k, (e1, e2)) in pairs.iter().enumerate() {
            let m = if which == Estimator::One { e1 } else { e2 };
            flat.row_mut(k).assign(&Array1::from_iter(m.iter().copied()));
        }
        let (cov, se) = empirical_covariance(&flat);
        let mut elem = Vec::with_capacity(ps * ps);
        for i in 0..ps {
            for j in 0..ps {
                let p = i * ps + j;
                let rep = variance::bound_elementwise(which, [i, j, i, j], local, cfg.samples)?;
                elem.push((cov[[p, p]].abs(), se[[p, p]], rep.rhs));
            }
        }
        out.push(series(kinds[0], elem, cfg.z_tolerance));
        let fro = variance::bound_frobenius(which, local, cfg.samples)?;
        let fro_se = frobenius(&se);
        out.push(series(kinds[1], vec![(frobenius(&cov), fro_se, fro.rhs)], cfg.z_tolerance));
        if fits {
            let linf = variance::bound_linf(which, local, cfg.samples)?;
            let (k, _) = cov
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bk, bv), (k, v)| if v.abs() > bv { (k, v.abs()) } else { (bk, bv) });
            let se_k = se.as_slice().map(|s| s[k]).unwrap_or(0.0);
            out.push(series(kinds[2], vec![(max_abs(&cov), se_k, linf.rhs)], cfg.z_tolerance));
        }
    }
    Ok(RatioReport {
        samples: cfg.samples,
        trials: r,
        seed: cfg.seed,
        series: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop once `‖t̃ − η‖₂` falls below this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 0.5,
            max_iter: 200_000,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParamSet<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient ascent of the log-likelihood of one target
/// statistic: a "trained" surrogate whose mean residual is driven toward zero.
pub fn fit_to_target(
    spec: &NetworkSpec,
    params: &ParamSet<f64>,
    x: &Array1<f64>,
    t_target: &Array1<f64>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let all = Subset::all(spec.num_params());
    let mut theta = Array1::from(params.to_flat());
    let mut p = params.clone();
    for it in 0..=cfg.max_iter {
        let h = network::output(spec, &p, x)?;
        let eta = spec.family().mean_params(&h)?;
        let resid = t_target - &eta;
        let norm = frobenius(&resid);
        if !norm.is_finite() {
            return Err(FimError::NonFinite("fit residual"));
        }
        if norm < cfg.tol || it == cfg.max_iter {
            return Ok(FitResult {
                params: p,
                residual: norm,
                iterations: it,
                converged: norm < cfg.tol,
            });
        }
        let jac = network::jacobian_subset(spec, &p, x, &all)?;
        theta.scaled_add(cfg.learning_rate, &jac.t().dot(&resid));
        p = ParamSet::from_flat(spec, theta.as_slice().expect("contiguous"))?;
    }
    unreachable!("loop returns at max_iter")
}
