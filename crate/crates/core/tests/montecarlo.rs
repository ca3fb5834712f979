//! Monte Carlo agreement with the closed forms, fixed seeds throughout.

use fimlab::fim::{Estimator, LocalModel};
use fimlab::linalg::{frobenius, max_abs};
use fimlab::montecarlo::{
    convergence_sweep, distance_curve, fit_to_target, ratio_histograms, run_trials, FitConfig, MCConfig,
};
use fimlab::network::{self, ParamSet};
use fimlab::variance::{self, BoundKind};
use fimlab::{Activation, FamilyModel, Limits, NetworkSpec, Subset};
use ndarray::Array1;

fn local_of(spec: &NetworkSpec, params: &ParamSet<f64>, x: &Array1<f64>) -> LocalModel<f64> {
    LocalModel::new(spec, params, x, &Subset::all(spec.num_params()), &Limits::default()).unwrap()
}

/// Two-layer tanh net whose output bias is shifted so that `h_L = h`.
fn net_with_output(family: FamilyModel, hidden: usize, h: &[f64], seed: u64) -> (NetworkSpec, ParamSet<f64>, Array1<f64>) {
    let spec = NetworkSpec::new(vec![2, hidden, h.len()], Activation::Tanh, family).unwrap();
    let mut params = ParamSet::init_uniform(&spec, seed);
    let x = Array1::from(vec![0.6, -0.4]);
    let out = network::output(&spec, &params, &x).unwrap();
    let w = params.weight_mut(1);
    let bias = w.ncols() - 1;
    for (a, &target) in h.iter().enumerate() {
        w[[a, bias]] += target - out[a];
    }
    (spec, params, x)
}

fn cfg(estimator: Estimator, samples: usize, trials: usize, seed: u64) -> MCConfig {
    MCConfig { estimator, samples, trials, seed, ..MCConfig::default() }
}

#[test]
fn empirical_covariance_within_z_tolerance() {
    let logit = (0.3f64 / 0.7).ln();
    let (spec, params, x) = net_with_output(FamilyModel::bernoulli(1), 2, &[logit], 3);
    let local = local_of(&spec, &params, &x);
    for est in [Estimator::One, Estimator::Two, Estimator::Combined(0.5)] {
        let s = run_trials(&local, &cfg(est, 10, 10_000, 11)).unwrap();
        assert!(s.cov_check.passed, "{est}: max |z| = {}", s.cov_check.max_abs_z);
        assert_eq!(s.cov_check.zero_variance_mismatches, 0);
        assert!(s.bias_norm <= s.bias_tolerance, "{est}: {} > {}", s.bias_norm, s.bias_tolerance);
    }
}

#[test]
fn estimators_unbiased_for_unbounded_families() {
    for family in [FamilyModel::poisson(2), FamilyModel::normal(2)] {
        let (spec, params, x) = net_with_output(family, 2, &[0.3, -0.5], 5);
        let local = local_of(&spec, &params, &x);
        let exact = local.exact_fim().into_values();
        for est in [Estimator::One, Estimator::Two] {
            // Both estimators are sample means, so one batch of 10⁵ is the
            // Monte Carlo mean of 10⁵ single-sample estimates.
            let n = 100_000;
            let batch = local.draw_batch(n, 21, 0).unwrap();
            let mean = local.estimate(est, &batch).unwrap().into_values();
            let var = variance::var_direct(est, &local, n).unwrap().values;
            for ((m, e), v) in mean.iter().zip(exact.iter()).zip(var.iter()) {
                let se = v.sqrt();
                assert!((m - e).abs() <= 4.0 * se + 1e-12 * e.abs(), "{family} {est}: {m} vs {e} (se {se})");
            }
        }
    }
}

#[test]
fn distance_decreases_on_a_random_net() {
    let spec = NetworkSpec::new(vec![2, 3, 2], Activation::Tanh, FamilyModel::bernoulli(2)).unwrap();
    let params = ParamSet::init_uniform(&spec, 17);
    let x = Array1::from(vec![0.9, 0.2]);
    let local = local_of(&spec, &params, &x);
    let curve = distance_curve(&local, &cfg(Estimator::One, 1, 50, 2), &[10, 100, 1000, 10_000]).unwrap();
    assert!(curve.monotone_decreasing, "{:?}", curve.points);
    let slope = curve.fit.slope().unwrap();
    assert!(slope < 0.0, "{slope}");
}

#[test]
fn distance_is_zero_when_both_estimators_are_exact() {
    let spec = NetworkSpec::new(vec![2, 1], Activation::Tanh, FamilyModel::bernoulli(1)).unwrap();
    let params = ParamSet::zeros(&spec);
    let x = Array1::from(vec![0.3, 0.1]);
    let local = local_of(&spec, &params, &x);
    let curve = distance_curve(&local, &cfg(Estimator::One, 1, 5, 0), &[1, 10, 100]).unwrap();
    assert!(curve.points.iter().all(|p| p.mean_distance == 0.0), "{:?}", curve.points);
}

#[test]
fn single_trial_sweeps_are_reproducible() {
    let spec = NetworkSpec::new(vec![2, 2, 2], Activation::Sigmoid, FamilyModel::poisson(2)).unwrap();
    let params = ParamSet::init_uniform(&spec, 4);
    let x = Array1::from(vec![-0.5, 0.5]);
    let local = local_of(&spec, &params, &x);
    let c = cfg(Estimator::One, 1, 1, 99);
    let a = distance_curve(&local, &c, &[5, 50]).unwrap();
    let b = distance_curve(&local, &c, &[5, 50]).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn sweeps_do_not_depend_on_thread_count() {
    let spec = NetworkSpec::new(vec![2, 3, 1], Activation::Softplus, FamilyModel::normal(1)).unwrap();
    let params = ParamSet::init_uniform(&spec, 8);
    let x = Array1::from(vec![0.1, 0.7]);
    let local = local_of(&spec, &params, &x);
    let with = |threads| MCConfig { threads: Some(threads), ..cfg(Estimator::Two, 4, 40, 6) };
    let ns = [2, 20, 200];
    let conv = |t| format!("{:?}", convergence_sweep(&local, &with(t), &ns).unwrap());
    let dist = |t| format!("{:?}", distance_curve(&local, &with(t), &ns).unwrap());
    let ratios = |t| format!("{:?}", ratio_histograms(&local, &with(t)).unwrap());
    assert_eq!(conv(1), conv(5));
    assert_eq!(dist(1), dist(5));
    assert_eq!(ratios(1), ratios(5));
}

#[test]
fn ratios_stay_below_one_across_configurations() {
    let families = [FamilyModel::bernoulli(2), FamilyModel::poisson(2), FamilyModel::normal(2), FamilyModel::categorical(2)];
    for k in 0..20u64 {
        let family = families[k as usize % 4];
        let act = Activation::ALL[(k / 4) as usize % 4];
        let spec = NetworkSpec::new(vec![2, 1 + k as usize % 3, 2], act, family).unwrap();
        let params = ParamSet::init_uniform(&spec, 100 + k);
        let x = Array1::from(vec![0.5, -1.0]);
        let local = local_of(&spec, &params, &x);
        let report = ratio_histograms(&local, &cfg(Estimator::One, 1 + 4 * k as usize, 400, k)).unwrap();
        for s in &report.series {
            assert_eq!(s.violations, 0, "config {k}, {}: max ratio {:?}", s.bound, s.max);
        }
    }
}

/// Monte Carlo ratios for the element-wise bound, pooled over both estimators.
fn pooled_median(local: &LocalModel<f64>, seed: u64) -> f64 {
    let report = ratio_histograms(local, &cfg(Estimator::One, 10, 2000, seed)).unwrap();
    let mut all: Vec<f64> = [BoundKind::Elementwise1, BoundKind::Elementwise2]
        .into_iter()
        .flat_map(|b| report.series(b).unwrap().ratios.clone())
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all[all.len() / 2]
}

#[test]
fn trained_network_has_looser_bounds() {
    let mut trained = Vec::new();
    let mut random = Vec::new();
    let target = Array1::from(vec![1.0, 0.0, 1.0]);
    for seed in 0..6u64 {
        let spec = NetworkSpec::new(vec![2, 3, 3], Activation::Tanh, FamilyModel::bernoulli(3)).unwrap();
        let params = ParamSet::init_uniform(&spec, 40 + seed);
        let x = Array1::from(vec![0.8, -0.3]);
        let fit = fit_to_target(&spec, &params, &x, &target, &FitConfig::default()).unwrap();
        assert!(fit.converged, "fit residual {}", fit.residual);
        random.push(pooled_median(&local_of(&spec, &params, &x), seed));
        trained.push(pooled_median(&local_of(&spec, &fit.params, &x), seed));
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let (t, r) = (med(&mut trained), med(&mut random));
    println!("median ratio: trained {t:.4}, random {r:.4}");
    assert!(t < r, "trained {t} vs random {r}");
}

#[test]
fn trained_network_second_estimator_gap_vanishes() {
    let spec = NetworkSpec::new(vec![2, 3, 1], Activation::Tanh, FamilyModel::bernoulli(1)).unwrap();
    let params = ParamSet::init_uniform(&spec, 9);
    let x = Array1::from(vec![0.8, -0.3]);
    let target = Array1::from(vec![1.0]);
    let fit = fit_to_target(&spec, &params, &x, &target, &FitConfig::default()).unwrap();
    let gap = |p: &ParamSet<f64>| {
        let l = local_of(&spec, p, &x);
        let b = l.draw_batch(10_000, 3, 0).unwrap();
        let (_, d2) = l.empirical_gap(&target, &b).unwrap();
        // ΔÎ₂ = Σ_a (t̄ − t_target)_a ∂²h_a.
        let expected = l.hessian_combination(&(b.mean() - &target));
        assert!(max_abs(&(&d2 - &expected)) <= 1e-12 * max_abs(&expected).max(1e-12));
        frobenius(&d2)
    };
    let (warm, cold) = (gap(&fit.params), gap(&params));
    println!("gap: trained {warm:e}, random {cold:e}");
    assert!(warm < 0.05 * cold, "{warm} vs {cold}");
}
