//! Closed forms against independent oracles: finite differences of the
//! log-partition, explicit sums over outcomes, and truncated series.

use fimlab::expfam::MomentSet;
use fimlab::fim::{Estimator, LocalModel, SampleBatch};
use fimlab::linalg::max_abs;
use fimlab::network::{self, ParamSet};
use fimlab::numdiff::{derivative_tensor, relative_error};
use fimlab::variance;
use fimlab::{Activation, FamilyModel, Limits, NetworkSpec, RngStream, Subset};
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};

fn draw_h(family: &FamilyModel, seed: u64) -> Array1<f64> {
    let mut rng = RngStream::at(seed, 1, 0);
    let mut h = Array1::from_iter((0..family.dim_h()).map(|_| 2.0 * rng.uniform() - 1.0));
    if family.kind() == fimlab::FamilyKind::UnivariateGaussianNatural {
        // h₂ = −1/(2s²) < 0.
        h[1] = -1.0 - rng.uniform();
    }
    h
}

fn families() -> Vec<FamilyModel> {
    vec![
        FamilyModel::bernoulli(1),
        FamilyModel::bernoulli(3),
        FamilyModel::normal(2),
        FamilyModel::poisson(2),
        FamilyModel::gaussian2(),
        FamilyModel::categorical(3),
    ]
}

fn as_dyn<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

#[test]
fn cumulants_match_log_partition_derivatives() {
    for (k, family) in families().into_iter().enumerate() {
        for seed in 0..3 {
            let h = draw_h(&family, 10 * k as u64 + seed);
            let m = family.moments(&h).unwrap();
            let f = |v: &[f64]| family.log_partition(&Array1::from(v.to_vec())).unwrap();
            let x = h.to_vec();
            let d1 = derivative_tensor(&f, &x, 1);
            let d2 = derivative_tensor(&f, &x, 2);
            let d3 = derivative_tensor(&f, &x, 3);
            let d4 = derivative_tensor(&f, &x, 4);
            let e1 = relative_error(as_dyn(&m.eta).iter(), d1.iter(), 1.0);
            let e2 = relative_error(as_dyn(&m.fim_head).iter(), d2.iter(), 1.0);
            let e3 = relative_error(as_dyn(&m.cum3).iter(), d3.iter(), 1.0);
            let e4 = relative_error(as_dyn(&m.cum4).iter(), d4.iter(), 1.0);
            assert!(e1 < 1e-9 && e2 < 1e-7, "{family} orders 1-2: {e1:e} {e2:e}");
            assert!(e3 < 1e-5 && e4 < 1e-5, "{family} orders 3-4: {e3:e} {e4:e}");
        }
    }
}

/// Central moments up to order four by summing over outcomes.
fn enumerated_moments(outcomes: &[(f64, Array1<f64>)]) -> (Array1<f64>, Array2<f64>, ArrayD<f64>, ArrayD<f64>) {
    let d = outcomes[0].1.len();
    let mut mean = Array1::zeros(d);
    for (p, t) in outcomes {
        mean.scaled_add(*p, t);
    }
    let mut c2 = Array2::zeros((d, d));
    let mut c3 = ArrayD::zeros(IxDyn(&[d; 3]));
    let mut c4 = ArrayD::zeros(IxDyn(&[d; 4]));
    for (p, t) in outcomes {
        let u = t - &mean;
        for a in 0..d {
            for b in 0..d {
                c2[[a, b]] += p * u[a] * u[b];
                for c in 0..d {
                    c3[[a, b, c].as_slice()] += p * u[a] * u[b] * u[c];
                    for e in 0..d {
                        c4[[a, b, c, e].as_slice()] += p * u[a] * u[b] * u[c] * u[e];
                    }
                }
            }
        }
    }
    (mean, c2, c3, c4)
}

#[test]
fn finite_support_moments_match_enumeration() {
    for family in [FamilyModel::bernoulli(1), FamilyModel::bernoulli(3), FamilyModel::categorical(4)] {
        for seed in 0..4 {
            let h = draw_h(&family, seed);
            let m: MomentSet<f64> = family.moments(&h).unwrap();
            let outcomes = family.enumerate_outcomes(&h).unwrap();
            let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-14);
            let (mean, c2, c3, c4) = enumerated_moments(&outcomes);
            assert!(max_abs(&(&m.eta - &mean)) < 1e-14, "{family}");
            assert!(max_abs(&(&m.fim_head - &c2)) < 1e-14, "{family}");
            assert!(max_abs(&(as_dyn(&m.cum3) - &c3)) < 1e-14, "{family}");
            assert!(max_abs(&(as_dyn(&m.cmom4) - &c4)) < 1e-14, "{family}");
        }
    }
}

#[test]
fn poisson_moments_match_truncated_series() {
    for lambda in [0.3f64, 1.0, 4.5, 12.0] {
        let family = FamilyModel::poisson(1);
        let m = family.moments(&Array1::from(vec![lambda.ln()])).unwrap();
        let mut p = (-lambda).exp();
        let mut mom = [0.0f64; 5];
        for k in 0..200 {
            if k > 0 {
                p *= lambda / k as f64;
            }
            let u = k as f64 - lambda;
            for (r, acc) in mom.iter_mut().enumerate() {
                *acc += p * u.powi(r as i32);
            }
        }
        let tol = 1e-12 * lambda.max(1.0).powi(2);
        assert!((m.fim_head[[0, 0]] - mom[2]).abs() < tol);
        assert!((m.cum3[[0, 0, 0]] - mom[3]).abs() < tol);
        assert!((m.cmom4[[0, 0, 0, 0]] - mom[4]).abs() < tol * 10.0);
    }
}

fn random_local(seed: u64, family: FamilyModel, layers: Vec<usize>, act: Activation) -> LocalModel<f64> {
    let spec = NetworkSpec::new(layers, act, family).unwrap();
    let params = ParamSet::init_uniform(&spec, seed);
    let mut rng = RngStream::at(seed, 2, 0);
    let x = Array1::from_iter((0..spec.input_dim()).map(|_| 2.0 * rng.uniform() - 1.0));
    LocalModel::new(&spec, &params, &x, &Subset::all(spec.num_params()), &Limits::default()).unwrap()
}

fn outer(a: &Array2<f64>) -> Array4<f64> {
    let p = a.nrows();
    Array4::from_shape_fn((p, p, p, p), |(i, j, k, l)| a[[i, j]] * a[[k, l]])
}

fn enumerated_cov(local: &LocalModel<f64>, which: Estimator) -> Array4<f64> {
    let exact = local.exact_fim().into_values();
    let p = exact.nrows();
    let mut cov = Array4::zeros((p, p, p, p));
    for (prob, t) in local.family().enumerate_outcomes(local.h_l()).unwrap() {
        let batch = SampleBatch::from_samples(t.insert_axis(Axis(0))).unwrap();
        let d = local.estimate(which, &batch).unwrap().into_values() - &exact;
        cov.scaled_add(prob, &outer(&d));
    }
    cov
}

#[test]
fn categorical_and_combined_covariances_match_enumeration() {
    let cases = [
        (FamilyModel::categorical(3), vec![2, 2, 3], Activation::Tanh),
        (FamilyModel::categorical(2), vec![1, 3, 2], Activation::Softplus),
        (FamilyModel::bernoulli(2), vec![2, 2, 2], Activation::Sigmoid),
    ];
    for (k, (family, layers, act)) in cases.into_iter().enumerate() {
        let local = random_local(k as u64, family, layers, act);
        for which in [Estimator::One, Estimator::Two, Estimator::Combined(0.3), Estimator::Combined(0.0), Estimator::Combined(1.0)] {
            let closed = variance::cov_for(which, &local, 1).unwrap();
            let direct = enumerated_cov(&local, which);
            let err = max_abs(&(closed.values() - &direct)) / max_abs(&direct).max(1.0);
            assert!(err < 1e-12, "{family} {which}: {err:e}");
        }
    }
}

#[test]
fn fim_equals_expected_negative_loglik_hessian() {
    let spec = NetworkSpec::new(vec![2, 3, 2], Activation::Tanh, FamilyModel::bernoulli(2)).unwrap();
    let params = ParamSet::init_uniform(&spec, 8);
    let x = Array1::from(vec![0.4, -0.8]);
    let all = Subset::all(spec.num_params());
    let local = LocalModel::new(&spec, &params, &x, &all, &Limits::default()).unwrap();
    let p = spec.num_params();
    let mut expected = Array2::zeros((p, p));
    let mut outer_score = Array2::zeros((p, p));
    for (prob, t) in spec.family().enumerate_outcomes(local.h_l()).unwrap() {
        let h = network::loglik_hessian(&spec, &params, &x, &t, &all, &Limits::default()).unwrap();
        expected.scaled_add(-prob, &h);
        let g = network::loglik_grad(&spec, &params, &x, &t, &all).unwrap();
        let gg = Array2::from_shape_fn((p, p), |(i, j)| g[i] * g[j]);
        outer_score.scaled_add(prob, &gg);
    }
    let exact = local.exact_fim().into_values();
    assert!(max_abs(&(&expected - &exact)) < 1e-13);
    assert!(max_abs(&(&outer_score - &exact)) < 1e-13);
}

#[test]
fn loglik_gradient_matches_finite_differences() {
    let spec = NetworkSpec::new(vec![3, 2, 2], Activation::Sigmoid, FamilyModel::poisson(2)).unwrap();
    let params = ParamSet::init_uniform(&spec, 4);
    let x = Array1::from(vec![0.2, 1.0, -0.5]);
    let t = Array1::from(vec![2.0, 0.0]);
    let all = Subset::all(spec.num_params());
    let theta = params.to_flat();
    let f = |th: &[f64]| {
        let p = ParamSet::from_flat(&spec, th).unwrap();
        network::loglik(&spec, &p, &x, &t).unwrap()
    };
    let fd = derivative_tensor(&f, &theta, 1);
    let g = network::loglik_grad(&spec, &params, &x, &t, &all).unwrap();
    assert!(relative_error(as_dyn(&g).iter(), fd.iter(), 1.0) < 1e-9);
    let fd2 = derivative_tensor(&f, &theta, 2);
    let h = network::loglik_hessian(&spec, &params, &x, &t, &all, &Limits::default()).unwrap();
    assert!(relative_error(as_dyn(&h).iter(), fd2.iter(), 1.0) < 1e-6);
}

#[test]
fn jacobian_norm_bounds_hold() {
    for seed in 0..20u64 {
        let act = Activation::ALL[seed as usize % 4];
        let layers = vec![2, 1 + seed as usize % 4, 3, 2];
        let spec = NetworkSpec::new(layers, act, FamilyModel::normal(2)).unwrap();
        let params = ParamSet::<f64>::init_uniform(&spec, seed);
        let x = Array1::from(vec![1.5, -0.7]);
        for l in 0..spec.depth() {
            let r = network::jacobian_norm_report(&spec, &params, &x, l).unwrap();
            assert!(r.lhs_frobenius <= r.rhs_frobenius * (1.0 + 1e-12), "{r:?}");
            assert!(r.lhs_spectral <= r.rhs_spectral * (1.0 + 1e-12), "{r:?}");
        }
    }
}
