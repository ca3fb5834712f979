//! Exponential-family output heads.
//!
//! A head is `p(y | h) = exp(t(y)ᵀh − F(h))`. Derivatives of the log-partition
//! `F` are the cumulants of the sufficient statistic `t(y)`; this module
//! provides them in closed form up to order four, together with the fourth
//! central moment, exact samplers and outcome enumeration for finite support.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Array4};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};
use crate::rng::RngStream;
use crate::scalar::Real;

/// Largest factorized Bernoulli head that [`FamilyModel::enumerate_outcomes`]
/// will expand (2^20 outcomes).
pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    BernoulliFactorized,
    NormalUnitVarianceFactorized,
    PoissonFactorized,
    UnivariateGaussianNatural,
    Categorical,
}

impl FamilyKind {
    /// Short name used in configuration files.
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::BernoulliFactorized => "bernoulli",
            FamilyKind::NormalUnitVarianceFactorized => "normal",
            FamilyKind::PoissonFactorized => "poisson",
            FamilyKind::UnivariateGaussianNatural => "gaussian2",
            FamilyKind::Categorical => "categorical",
        }
    }

    pub fn is_factorized(self) -> bool {
        matches!(
            self,
            FamilyKind::BernoulliFactorized
                | FamilyKind::NormalUnitVarianceFactorized
                | FamilyKind::PoissonFactorized
        )
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = FimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bernoulli" | "bernoulli-factorized" => Ok(FamilyKind::BernoulliFactorized),
            "normal" | "normal-unit-variance" | "normal-unit-variance-factorized" => {
                Ok(FamilyKind::NormalUnitVarianceFactorized)
            }
            "poisson" | "poisson-factorized" => Ok(FamilyKind::PoissonFactorized),
            "gaussian2" | "univariate-gaussian-natural" => Ok(FamilyKind::UnivariateGaussianNatural),
            "categorical" => Ok(FamilyKind::Categorical),
            other => Err(FimError::UnknownFamily(other.to_string())),
        }
    }
}

/// On-disk form: `{"family": "bernoulli", "dim": 3}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FamilyRepr {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

/// An exponential-family head with natural parameter of dimension `dim_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct FamilyModel {
    kind: FamilyKind,
    dim: usize,
}

impl TryFrom<FamilyRepr> for FamilyModel {
    type Error = FimError;

    fn try_from(r: FamilyRepr) -> Result<Self> {
        let kind: FamilyKind = r.family.parse()?;
        let dim = match (kind, r.dim) {
            (FamilyKind::UnivariateGaussianNatural, d) => d.unwrap_or(2),
            (_, Some(d)) => d,
            (_, None) => 1,
        };
        FamilyModel::new(kind, dim)
    }
}

impl From<FamilyModel> for FamilyRepr {
    fn from(f: FamilyModel) -> Self {
        FamilyRepr {
            family: f.kind.name().to_string(),
            dim: Some(f.dim),
        }
    }
}

/// One draw from a head: the raw outcome and its sufficient statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T> {
    /// Outcome `y`. Factorized heads: one entry per coordinate. Categorical:
    /// the class index. Univariate Gaussian: the scalar observation.
    pub y: Vec<f64>,
    pub t: Array1<T>,
}

/// Cumulants and central moments of `t(y)` at a fixed natural parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet<T> {
    /// Mean parameters `η = ∇F(h)`.
    pub eta: Array1<T>,
    /// `I(h) = ∇²F(h) = Cov(t)`.
    pub fim_head: Array2<T>,
    /// Third cumulant `∇³F(h)`, equal to the third central moment.
    pub cum3: Array3<T>,
    /// Fourth cumulant `κ = ∇⁴F(h)`.
    pub cum4: Array4<T>,
    /// Fourth central moment `K = E[(t−η)⊗4]`.
    pub cmom4: Array4<T>,
}

impl<T: Real> MomentSet<T> {
    /// Assembles the fourth central moment from the cumulants:
    /// `K_abcd = κ_abcd + I_ab I_cd + I_ac I_bd + I_ad I_bc`.
    pub fn from_cumulants(
        eta: Array1<T>,
        fim_head: Array2<T>,
        cum3: Array3<T>,
        cum4: Array4<T>,
    ) -> Self {
        let n = eta.len();
        let i = &fim_head;
        let cmom4 = Array4::from_shape_fn((n, n, n, n), |(a, b, c, d)| {
            cum4[[a, b, c, d]] + i[[a, b]] * i[[c, d]] + i[[a, c]] * i[[b, d]] + i[[a, d]] * i[[b, c]]
        });
        MomentSet {
            eta,
            fim_head,
            cum3,
            cum4,
            cmom4,
        }
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    /// `K − I⊗I`: the covariance of the rank-one head estimator `(t−η)(t−η)ᵀ`.
    pub fn excess_kurtosis_tensor(&self) -> Array4<T> {
        let n = self.dim();
        let i = &self.fim_head;
        Array4::from_shape_fn((n, n, n, n), |(a, b, c, d)| {
            self.cmom4[[a, b, c, d]] - i[[a, b]] * i[[c, d]]
        })
    }
}

/// One row of the univariate cumulant table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyTableRow {
    pub mean_param: f64,
    pub h: f64,
    pub f: f64,
    pub d2f: f64,
    pub d4f: f64,
    /// Fourth central moment `F'''' + 3 F''²`.
    pub k: f64,
    /// `K − Var²`.
    pub k_minus_var2: f64,
}

fn logistic_t<T: Real>(h: T) -> T {
    if h >= T::zero() {
        T::one() / (T::one() + (-h).exp())
    } else {
        let e = h.exp();
        e / (T::one() + e)
    }
}

fn softplus_t<T: Real>(h: T) -> T {
    h.max(T::zero()) + (-h.abs()).exp().ln_1p()
}

impl FamilyModel {
    pub fn new(kind: FamilyKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FimError::InvalidNetwork(format!("{kind} head needs dim >= 1")));
        }
        match kind {
            FamilyKind::UnivariateGaussianNatural if dim != 2 => Err(FimError::Dimension {
                what: "gaussian2 natural parameter",
                expected: 2,
                got: dim,
            }),
            FamilyKind::Categorical if dim < 2 => Err(FimError::InvalidNetwork(
                "categorical head needs at least 2 classes".into(),
            )),
            _ => Ok(FamilyModel { kind, dim }),
        }
    }

    pub fn bernoulli(dim: usize) -> Self {
        Self::new(FamilyKind::BernoulliFactorized, dim).expect("dim >= 1")
    }

    pub fn normal(dim: usize) -> Self {
        Self::new(FamilyKind::NormalUnitVarianceFactorized, dim).expect("dim >= 1")
    }

    pub fn poisson(dim: usize) -> Self {
        Self::new(FamilyKind::PoissonFactorized, dim).expect("dim >= 1")
    }

    pub fn gaussian2() -> Self {
        FamilyModel {
            kind: FamilyKind::UnivariateGaussianNatural,
            dim: 2,
        }
    }

    pub fn categorical(classes: usize) -> Self {
        Self::new(FamilyKind::Categorical, classes).expect("classes >= 2")
    }

    pub fn from_name(name: &str, dim: usize) -> Result<Self> {
        Self::new(name.parse()?, dim)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim_h(&self) -> usize {
        self.dim
    }

    pub fn dim_t(&self) -> usize {
        self.dim
    }

    pub fn has_finite_support(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::BernoulliFactorized | FamilyKind::Categorical
        )
    }

    fn check_natural<T: Real>(&self, h: &Array1<T>) -> Result<()> {
        if h.len() != self.dim {
            return Err(FimError::Dimension {
                what: "natural parameter",
                expected: self.dim,
                got: h.len(),
            });
        }
        for (index, &v) in h.iter().enumerate() {
            if !v.is_finite() {
                return Err(FimError::NaturalDomain {
                    family: self.kind.name(),
                    index,
                    value: v.as_f64(),
                    reason: "must be finite",
                });
            }
        }
        match self.kind {
            FamilyKind::UnivariateGaussianNatural if h[1] >= T::zero() => {
                Err(FimError::NaturalDomain {
                    family: self.kind.name(),
                    index: 1,
                    value: h[1].as_f64(),
                    reason: "h2 must be negative",
                })
            }
            FamilyKind::PoissonFactorized => {
                for (index, &v) in h.iter().enumerate() {
                    if !v.exp().is_finite() {
                        return Err(FimError::NaturalDomain {
                            family: self.kind.name(),
                            index,
                            value: v.as_f64(),
                            reason: "rate exp(h) overflows",
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Log-partition function `F(h)`.
    pub fn log_partition<T: Real>(&self, h: &Array1<T>) -> Result<T> {
        self.check_natural(h)?;
        let v = match self.kind {
            FamilyKind::BernoulliFactorized => h.iter().map(|&x| softplus_t(x)).sum(),
            FamilyKind::NormalUnitVarianceFactorized => {
                h.iter().map(|&x| T::lit(0.5) * x * x).sum()
            }
            FamilyKind::PoissonFactorized => h.iter().map(|&x| x.exp()).sum(),
            FamilyKind::UnivariateGaussianNatural => {
                let (u, v) = (h[0], h[1]);
                -u * u / (T::lit(4.0) * v) + T::lit(0.5) * (-T::lit(std::f64::consts::PI) / v).ln()
            }
            FamilyKind::Categorical => {
                let m = h.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
                m + h.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
            }
        };
        Ok(v)
    }

    /// Mean parameters `η = ∇F(h)` only.
    pub fn mean_params<T: Real>(&self, h: &Array1<T>) -> Result<Array1<T>> {
        self.check_natural(h)?;
        Ok(match self.kind {
            FamilyKind::BernoulliFactorized => h.mapv(logistic_t),
            FamilyKind::NormalUnitVarianceFactorized => h.clone(),
            FamilyKind::PoissonFactorized => h.mapv(|x| x.exp()),
            FamilyKind::UnivariateGaussianNatural => {
                let (u, v) = (h[0], h[1]);
                let two = T::lit(2.0);
                Array1::from(vec![-u / (two * v), (u * u - two * v) / (T::lit(4.0) * v * v)])
            }
            FamilyKind::Categorical => softmax(h),
        })
    }

    /// Cumulants to order four and the fourth central moment at `h`.
    pub fn moments<T: Real>(&self, h: &Array1<T>) -> Result<MomentSet<T>> {
        self.check_natural(h)?;
        let n = self.dim;
        let (eta, fim, c3, c4) = match self.kind {
            k if k.is_factorized() => {
                let mut eta = Array1::zeros(n);
                let mut fim = Array2::zeros((n, n));
                let mut c3 = Array3::zeros((n, n, n));
                let mut c4 = Array4::zeros((n, n, n, n));
                for a in 0..n {
                    let [d1, d2, d3, d4] = scalar_cumulants(k, h[a]);
                    eta[a] = d1;
                    fim[[a, a]] = d2;
                    c3[[a, a, a]] = d3;
                    c4[[a, a, a, a]] = d4;
                }
                (eta, fim, c3, c4)
            }
            FamilyKind::UnivariateGaussianNatural => gaussian2_cumulants(h[0], h[1]),
            FamilyKind::Categorical => categorical_cumulants(&softmax(h)),
            _ => unreachable!(),
        };
        Ok(MomentSet::from_cumulants(eta, fim, c3, c4))
    }

    /// Inverse of the mean map.
    ///
    /// Mean parameters: Bernoulli `p`, Normal `μ`, Poisson `λ` (one per
    /// coordinate); Gaussian `(μ, s)` with `s` the standard deviation;
    /// categorical class probabilities (mapped to `h = log p`).
    pub fn natural_from_mean<T: Real>(&self, mean: &Array1<T>) -> Result<Array1<T>> {
        if mean.len() != self.dim {
            return Err(FimError::Dimension {
                what: "mean parameter",
                expected: self.dim,
                got: mean.len(),
            });
        }
        let family = self.kind.name();
        let bad = |index: usize, value: T, reason: &'static str| FimError::MeanRange {
            family,
            index,
            value: value.as_f64(),
            reason,
        };
        for (i, &v) in mean.iter().enumerate() {
            if !v.is_finite() {
                return Err(bad(i, v, "must be finite"));
            }
        }
        match self.kind {
            FamilyKind::BernoulliFactorized => {
                for (i, &p) in mean.iter().enumerate() {
                    if p <= T::zero() || p >= T::one() {
                        return Err(bad(i, p, "need 0 < p < 1"));
                    }
                }
                Ok(mean.mapv(|p| (p / (T::one() - p)).ln()))
            }
            FamilyKind::NormalUnitVarianceFactorized => Ok(mean.clone()),
            FamilyKind::PoissonFactorized => {
                for (i, &l) in mean.iter().enumerate() {
                    if l <= T::zero() {
                        return Err(bad(i, l, "need lambda > 0"));
                    }
                }
                Ok(mean.mapv(|l| l.ln()))
            }
            FamilyKind::UnivariateGaussianNatural => {
                let (mu, s) = (mean[0], mean[1]);
                if s <= T::zero() {
                    return Err(bad(1, s, "need s > 0"));
                }
                let s2 = s * s;
                Ok(Array1::from(vec![mu / s2, -T::one() / (T::lit(2.0) * s2)]))
            }
            FamilyKind::Categorical => {
                for (i, &p) in mean.iter().enumerate() {
                    if p <= T::zero() {
                        return Err(bad(i, p, "class probabilities must be positive"));
                    }
                }
                let total: T = mean.iter().copied().sum();
                if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
                    return Err(bad(0, total, "class probabilities must sum to 1"));
                }
                Ok(mean.mapv(|p| p.ln()))
            }
        }
    }

    /// Exact draw `y ~ p(y | h)`.
    pub fn sample<T: Real>(&self, h: &Array1<T>, rng: &mut RngStream) -> Result<Draw<T>> {
        let eta = self.mean_params(h)?;
        let draw = match self.kind {
            FamilyKind::BernoulliFactorized => {
                let y: Vec<f64> = eta
                    .iter()
                    .map(|&p| if rng.uniform() < p.as_f64() { 1.0 } else { 0.0 })
                    .collect();
                Draw {
                    t: y.iter().map(|&v| T::lit(v)).collect(),
                    y,
                }
            }
            FamilyKind::NormalUnitVarianceFactorized => {
                let y: Vec<f64> = h
                    .iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m.as_f64() + z
                    })
                    .collect();
                Draw {
                    t: y.iter().map(|&v| T::lit(v)).collect(),
                    y,
                }
            }
            FamilyKind::PoissonFactorized => {
                let y: Vec<f64> = eta.iter().map(|&l| poisson(l.as_f64(), rng)).collect();
                Draw {
                    t: y.iter().map(|&v| T::lit(v)).collect(),
                    y,
                }
            }
            FamilyKind::UnivariateGaussianNatural => {
                let (u, v) = (h[0].as_f64(), h[1].as_f64());
                let mu = -u / (2.0 * v);
                let s = (-1.0 / (2.0 * v)).sqrt();
                let z: f64 = StandardNormal.sample(rng);
                let y = mu + s * z;
                Draw {
                    y: vec![y],
                    t: Array1::from(vec![T::lit(y), T::lit(y * y)]),
                }
            }
            FamilyKind::Categorical => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut class = self.dim - 1;
                for (k, &p) in eta.iter().enumerate() {
                    acc += p.as_f64();
                    if u < acc {
                        class = k;
                        break;
                    }
                }
                let mut t = Array1::zeros(self.dim);
                t[class] = T::one();
                Draw {
                    y: vec![class as f64],
                    t,
                }
            }
        };
        Ok(draw)
    }

    /// All outcomes of a finite-support head with their probabilities.
    pub fn enumerate_outcomes<T: Real>(&self, h: &Array1<T>) -> Result<Vec<(T, Array1<T>)>> {
        let eta = self.mean_params(h)?;
        match self.kind {
            FamilyKind::BernoulliFactorized => {
                if self.dim > MAX_ENUMERATION_DIM {
                    return Err(FimError::EnumerationTooLarge(1usize << self.dim.min(63)));
                }
                let count = 1usize << self.dim;
                Ok((0..count)
                    .map(|mask| {
                        let mut prob = T::one();
                        let mut t = Array1::zeros(self.dim);
                        for a in 0..self.dim {
                            if mask >> a & 1 == 1 {
                                t[a] = T::one();
                                prob *= eta[a];
                            } else {
                                prob *= T::one() - eta[a];
                            }
                        }
                        (prob, t)
                    })
                    .collect())
            }
            FamilyKind::Categorical => Ok((0..self.dim)
                .map(|k| {
                    let mut t = Array1::zeros(self.dim);
                    t[k] = T::one();
                    (eta[k], t)
                })
                .collect()),
            _ => Err(FimError::InfiniteSupport(self.kind.name())),
        }
    }

    /// Univariate cumulant-table row at a mean parameter. Only for the
    /// one-dimensional factorized families.
    pub fn table_row(kind: FamilyKind, mean_param: f64) -> Result<FamilyTableRow> {
        if !kind.is_factorized() {
            return Err(FimError::InvalidConfig(format!(
                "cumulant table is defined for bernoulli, normal and poisson, not {kind}"
            )));
        }
        let family = FamilyModel::new(kind, 1)?;
        let h = family.natural_from_mean(&Array1::from(vec![mean_param]))?[0];
        let f = family.log_partition(&Array1::from(vec![h]))?;
        let [_, d2, _, d4] = scalar_cumulants(kind, h);
        let k = d4 + 3.0 * d2 * d2;
        Ok(FamilyTableRow {
            mean_param,
            h,
            f,
            d2f: d2,
            d4f: d4,
            k,
            k_minus_var2: k - d2 * d2,
        })
    }
}

impl fmt::Display for FamilyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind, self.dim)
    }
}

/// `[F', F'', F''', F'''']` for one coordinate of a factorized head.
fn scalar_cumulants<T: Real>(kind: FamilyKind, h: T) -> [T; 4] {
    match kind {
        FamilyKind::BernoulliFactorized => {
            let p = logistic_t(h);
            let q = T::one() - p;
            let v = p * q;
            [
                p,
                v,
                v * (T::one() - T::lit(2.0) * p),
                v * (T::lit(6.0) * p * p - T::lit(6.0) * p + T::one()),
            ]
        }
        FamilyKind::NormalUnitVarianceFactorized => [h, T::one(), T::zero(), T::zero()],
        FamilyKind::PoissonFactorized => {
            let l = h.exp();
            [l, l, l, l]
        }
        _ => unreachable!("not a factorized family"),
    }
}

fn softmax<T: Real>(h: &Array1<T>) -> Array1<T> {
    let m = h.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
    let e = h.mapv(|x| (x - m).exp());
    let z: T = e.iter().copied().sum();
    e / z
}

/// Derivatives of `F(u, v) = −u²/(4v) + ½ ln(−π/v)`. Every derivative depends
/// only on how many of its indices hit `v`, so each order is a short table.
fn gaussian2_cumulants<T: Real>(u: T, v: T) -> (Array1<T>, Array2<T>, Array3<T>, Array4<T>) {
    let (one, two, three, four, six) = (T::one(), T::lit(2.0), T::lit(3.0), T::lit(4.0), T::lit(6.0));
    let v2 = v * v;
    let v3 = v2 * v;
    let v4 = v3 * v;
    let v5 = v4 * v;
    let eta = Array1::from(vec![-u / (two * v), (u * u - two * v) / (four * v2)]);
    let d2 = [-one / (two * v), u / (two * v2), -u * u / (two * v3) + one / (two * v2)];
    let d3 = [T::zero(), one / (two * v2), -u / v3, three * u * u / (two * v4) - one / v3];
    let d4 = [
        T::zero(),
        T::zero(),
        -one / v3,
        three * u / v4,
        -six * u * u / v5 + three / v4,
    ];
    let fim = Array2::from_shape_fn((2, 2), |(a, b)| d2[a + b]);
    let c3 = Array3::from_shape_fn((2, 2, 2), |(a, b, c)| d3[a + b + c]);
    let c4 = Array4::from_shape_fn((2, 2, 2, 2), |(a, b, c, d)| d4[a + b + c + d]);
    (eta, fim, c3, c4)
}

/// Cumulants of a one-hot categorical statistic via the moment-cumulant
/// relations. Raw moments of one-hot `t` are `E[t_a t_b ...] = p_a` when all
/// indices coincide and zero otherwise.
fn categorical_cumulants<T: Real>(p: &Array1<T>) -> (Array1<T>, Array2<T>, Array3<T>, Array4<T>) {
    let n = p.len();
    let m1 = |a: usize| p[a];
    let m2 = |a: usize, b: usize| if a == b { p[a] } else { T::zero() };
    let m3 = |a: usize, b: usize, c: usize| if a == b && b == c { p[a] } else { T::zero() };
    let m4 = |a: usize, b: usize, c: usize, d: usize| {
        if a == b && b == c && c == d {
            p[a]
        } else {
            T::zero()
        }
    };
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let fim = Array2::from_shape_fn((n, n), |(a, b)| m2(a, b) - m1(a) * m1(b));
    let c3 = Array3::from_shape_fn((n, n, n), |(a, b, c)| {
        m3(a, b, c) - m2(a, b) * m1(c) - m2(a, c) * m1(b) - m2(b, c) * m1(a)
            + two * m1(a) * m1(b) * m1(c)
    });
    let c4 = Array4::from_shape_fn((n, n, n, n), |(a, b, c, d)| {
        m4(a, b, c, d)
            - (m3(a, b, c) * m1(d) + m3(a, b, d) * m1(c) + m3(a, c, d) * m1(b) + m3(b, c, d) * m1(a))
            - (m2(a, b) * m2(c, d) + m2(a, c) * m2(b, d) + m2(a, d) * m2(b, c))
            + two
                * (m2(a, b) * m1(c) * m1(d)
                    + m2(a, c) * m1(b) * m1(d)
                    + m2(a, d) * m1(b) * m1(c)
                    + m2(b, c) * m1(a) * m1(d)
                    + m2(b, d) * m1(a) * m1(c)
                    + m2(c, d) * m1(a) * m1(b))
            - six * m1(a) * m1(b) * m1(c) * m1(d)
    });
    (p.clone(), fim, c3, c4)
}

/// Poisson variate: Knuth's product method for small rates, PTRS
/// transformed rejection above.
fn poisson(lambda: f64, rng: &mut RngStream) -> f64 {
    if lambda <= 30.0 {
        let limit = (-lambda).exp();
        let mut k = 0.0;
        let mut prod = rng.uniform_open();
        while prod > limit {
            k += 1.0;
            prod *= rng.uniform_open();
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform_open();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - statrs::function::gamma::ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k;
        }
    }
}
