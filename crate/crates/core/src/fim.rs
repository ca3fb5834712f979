//! Exact Fisher information, its two sampling estimators, their convex
//! combination, the backpropagated metric, the empirical-Fisher gap and
//! reparametrized estimators.
//!
//! With `J = ∂h_L/∂θ`, `H^a = ∂²h_L^a/∂θ∂θᵀ` and `δ_i = t_i − η`:
//!
//! * exact: `I(θ) = Jᵀ I(h_L) J`
//! * estimator 1: `Î₁ = Jᵀ [(1/N) Σ δ_i δ_iᵀ] J`
//! * estimator 2: `Î₂ = Σ_a (η_a − t̄_a) H^a + Jᵀ I(h_L) J`

use std::fmt;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};
use crate::expfam::{FamilyModel, MomentSet};
use crate::linalg::{invert, max_asymmetry};
use crate::network::{self, BackpropTrace, NetworkSpec, ParamSet};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::subset::{Limits, Subset};

/// Which sampled estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum Estimator {
    One,
    Two,
    Combined(f64),
}

impl Estimator {
    pub fn combined(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Estimator::Combined(alpha))
    }

    pub fn label(&self) -> String {
        match self {
            Estimator::One => "estimator1".into(),
            Estimator::Two => "estimator2".into(),
            Estimator::Combined(a) => format!("combined({a})"),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FimError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum Provenance {
    Exact,
    Estimator1,
    Estimator2,
    Combined(f64),
}

impl From<Estimator> for Provenance {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::One => Provenance::Estimator1,
            Estimator::Two => Provenance::Estimator2,
            Estimator::Combined(a) => Provenance::Combined(a),
        }
    }
}

/// A symmetric `P_s × P_s` information matrix over a parameter subset.
#[derive(Debug, Clone, PartialEq)]
pub struct FimMatrix<T> {
    values: Array2<T>,
    subset: Subset,
    provenance: Provenance,
}

impl<T: Real> FimMatrix<T> {
    pub fn new(values: Array2<T>, subset: Subset, provenance: Provenance) -> Result<Self> {
        if values.dim() != (subset.len(), subset.len()) {
            return Err(FimError::Dimension {
                what: "FIM matrix side",
                expected: subset.len(),
                got: values.nrows(),
            });
        }
        let scale = crate::linalg::max_abs(&values).as_f64().max(1.0);
        let asym = max_asymmetry(&values).as_f64();
        if asym > 1e-12 * scale {
            return Err(FimError::NotSymmetric(asym));
        }
        Ok(FimMatrix {
            values,
            subset,
            provenance,
        })
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn subset(&self) -> &Subset {
        &self.subset
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Sufficient statistics of `N` draws from the head, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    t: Array2<T>,
    /// `(master_seed, trial)` when drawn from counter streams.
    origin: Option<(u64, u64)>,
}

impl<T: Real> SampleBatch<T> {
    /// Draw `i` uses stream `(master_seed, trial, i)`.
    pub fn draw(family: &FamilyModel, h: &Array1<T>, n: usize, master_seed: u64, trial: u64) -> Result<Self> {
        if n == 0 {
            return Err(FimError::EmptyBatch);
        }
        let mut t = Array2::zeros((n, family.dim_t()));
        for (i, mut row) in t.axis_iter_mut(Axis(0)).enumerate() {
            let mut rng = RngStream::at(master_seed, trial, i as u64);
            row.assign(&family.sample(h, &mut rng)?.t);
        }
        Ok(SampleBatch {
            t,
            origin: Some((master_seed, trial)),
        })
    }

    pub fn from_samples(t: Array2<T>) -> Result<Self> {
        if t.nrows() == 0 {
            return Err(FimError::EmptyBatch);
        }
        Ok(SampleBatch { t, origin: None })
    }

    /// `n` copies of one statistic.
    pub fn repeated(t: &Array1<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FimError::EmptyBatch);
        }
        let rows = t.view().insert_axis(Axis(0));
        Self::from_samples(rows.broadcast((n, t.len())).expect("broadcast row").to_owned())
    }

    pub fn len(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.t.nrows() == 0
    }

    pub fn t_samples(&self) -> &Array2<T> {
        &self.t
    }

    pub fn origin(&self) -> Option<(u64, u64)> {
        self.origin
    }

    pub fn mean(&self) -> Array1<T> {
        let n = T::from_usize_lossy(self.len());
        let mut acc = Array1::zeros(self.t.ncols());
        for row in self.t.rows() {
            acc += &row;
        }
        acc / n
    }

    /// `(1/N) Σ (t_i − η)(t_i − η)ᵀ`.
    pub fn centered_second_moment(&self, eta: &Array1<T>) -> Array2<T> {
        let d = self.t.ncols();
        let mut acc = Array2::zeros((d, d));
        for row in self.t.rows() {
            let r = &row - eta;
            for a in 0..d {
                for b in 0..d {
                    acc[[a, b]] += r[a] * r[b];
                }
            }
        }
        acc / T::from_usize_lossy(self.len())
    }

    fn check_dim(&self, family: &FamilyModel) -> Result<()> {
        if self.t.ncols() != family.dim_t() {
            return Err(FimError::Dimension {
                what: "batch statistic width",
                expected: family.dim_t(),
                got: self.t.ncols(),
            });
        }
        Ok(())
    }
}

/// Everything about one `(network, θ, x, subset)` point that the estimators
/// and their covariances need, computed once.
#[derive(Debug, Clone)]
pub struct LocalModel<T> {
    spec: NetworkSpec,
    subset: Subset,
    theta: Array1<T>,
    h_l: Array1<T>,
    moments: MomentSet<T>,
    jac: Array2<T>,
    hess: Array3<T>,
    pullback: Array2<T>,
    backprop: BackpropTrace<T>,
    limits: Limits,
}

impl<T: Real> LocalModel<T> {
    pub fn new(
        spec: &NetworkSpec,
        params: &ParamSet<T>,
        x: &Array1<T>,
        subset: &Subset,
        limits: &Limits,
    ) -> Result<Self> {
        let der = network::output_derivatives(spec, params, x, subset, limits)?;
        let trace = network::forward(spec, params, x)?;
        let backprop = network::backprop_factors(spec, params, &trace);
        let moments = spec.family().moments(&der.h_l)?;
        let pullback = der.jac.t().dot(&moments.fim_head).dot(&der.jac);
        let flat = params.to_flat();
        let theta = subset.indices().iter().map(|&i| flat[i]).collect();
        Ok(LocalModel {
            spec: spec.clone(),
            subset: subset.clone(),
            theta,
            h_l: der.h_l,
            moments,
            jac: der.jac,
            hess: der.hess,
            pullback,
            backprop,
            limits: *limits,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn family(&self) -> &FamilyModel {
        self.spec.family()
    }

    pub fn subset(&self) -> &Subset {
        &self.subset
    }

    /// Parameter values on the subset, in subset order.
    pub fn theta(&self) -> &Array1<T> {
        &self.theta
    }

    pub fn h_l(&self) -> &Array1<T> {
        &self.h_l
    }

    pub fn moments(&self) -> &MomentSet<T> {
        &self.moments
    }

    pub fn jac(&self) -> &Array2<T> {
        &self.jac
    }

    pub fn hess(&self) -> &Array3<T> {
        &self.hess
    }

    pub fn backprop(&self) -> &BackpropTrace<T> {
        &self.backprop
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn draw_batch(&self, n: usize, master_seed: u64, trial: u64) -> Result<SampleBatch<T>> {
        SampleBatch::draw(self.family(), &self.h_l, n, master_seed, trial)
    }

    pub fn exact_fim(&self) -> FimMatrix<T> {
        FimMatrix {
            values: self.pullback.clone(),
            subset: self.subset.clone(),
            provenance: Provenance::Exact,
        }
    }

    /// `Jᵀ M J` for a head-space matrix `M`.
    pub fn pull_back(&self, m: &Array2<T>) -> Array2<T> {
        self.jac.t().dot(m).dot(&self.jac)
    }

    /// `Σ_a c_a H^a`.
    pub fn hessian_combination(&self, c: &Array1<T>) -> Array2<T> {
        let ps = self.subset.len();
        let flat = self
            .hess
            .view()
            .into_shape_with_order((self.hess.len_of(Axis(0)), ps * ps))
            .expect("contiguous hessian");
        c.dot(&flat).into_shape_with_order((ps, ps)).expect("square")
    }

    fn estimator1_values(&self, batch: &SampleBatch<T>) -> Result<Array2<T>> {
        batch.check_dim(self.family())?;
        Ok(self.pull_back(&batch.centered_second_moment(&self.moments.eta)))
    }

    fn estimator2_values(&self, batch: &SampleBatch<T>) -> Result<Array2<T>> {
        batch.check_dim(self.family())?;
        let bias = self.hessian_combination(&(&self.moments.eta - &batch.mean()));
        Ok(bias + &self.pullback)
    }

    pub fn estimate_fim1(&self, batch: &SampleBatch<T>) -> Result<FimMatrix<T>> {
        Ok(FimMatrix {
            values: self.estimator1_values(batch)?,
            subset: self.subset.clone(),
            provenance: Provenance::Estimator1,
        })
    }

    pub fn estimate_fim2(&self, batch: &SampleBatch<T>) -> Result<FimMatrix<T>> {
        Ok(FimMatrix {
            values: self.estimator2_values(batch)?,
            subset: self.subset.clone(),
            provenance: Provenance::Estimator2,
        })
    }

    /// `α Î₁ + (1 − α) Î₂` on the same batch. The endpoints return the single
    /// estimators unchanged.
    pub fn estimate_fim_combined(&self, alpha: f64, batch: &SampleBatch<T>) -> Result<FimMatrix<T>> {
        check_alpha(alpha)?;
        let values = if alpha == 1.0 {
            self.estimator1_values(batch)?
        } else if alpha == 0.0 {
            self.estimator2_values(batch)?
        } else {
            let a = T::lit(alpha);
            self.estimator1_values(batch)? * a + self.estimator2_values(batch)? * (T::one() - a)
        };
        Ok(FimMatrix {
            values,
            subset: self.subset.clone(),
            provenance: Provenance::Combined(alpha),
        })
    }

    pub fn estimate(&self, which: Estimator, batch: &SampleBatch<T>) -> Result<FimMatrix<T>> {
        match which {
            Estimator::One => self.estimate_fim1(batch),
            Estimator::Two => self.estimate_fim2(batch),
            Estimator::Combined(a) => self.estimate_fim_combined(a, batch),
        }
    }

    /// `B_lᵀ [(1/N) Σ δ δᵀ] B_l`, an `n_l × n_l` metric on layer `l`.
    pub fn backprop_metric(&self, batch: &SampleBatch<T>, l: usize) -> Result<Array2<T>> {
        batch.check_dim(self.family())?;
        let b = self.backprop.b.get(l).ok_or(FimError::IndexOutOfRange {
            index: l,
            num_params: self.spec.depth() + 1,
        })?;
        let s = batch.centered_second_moment(&self.moments.eta);
        Ok(b.t().dot(&s).dot(b))
    }

    /// Score `Jᵀ(t − η)` on the subset.
    pub fn score(&self, t: &Array1<T>) -> Array1<T> {
        self.jac.t().dot(&(t - &self.moments.eta))
    }

    /// Log-likelihood Hessian `Σ_a (t_a − η_a) H^a − Jᵀ I(h_L) J`.
    pub fn loglik_hessian(&self, t: &Array1<T>) -> Array2<T> {
        self.hessian_combination(&(t - &self.moments.eta)) - &self.pullback
    }

    /// `(ΔÎ₁, ΔÎ₂)`: squared score and negative Hessian at the observed
    /// statistic, minus the corresponding estimator.
    pub fn empirical_gap(&self, t_target: &Array1<T>, batch: &SampleBatch<T>) -> Result<(Array2<T>, Array2<T>)> {
        if t_target.len() != self.family().dim_t() {
            return Err(FimError::Dimension {
                what: "target statistic",
                expected: self.family().dim_t(),
                got: t_target.len(),
            });
        }
        let g = self.score(t_target);
        let outer = Array2::from_shape_fn((g.len(), g.len()), |(i, j)| g[i] * g[j]);
        let d1 = outer - self.estimator1_values(batch)?;
        let d2 = -self.loglik_hessian(t_target) - self.estimator2_values(batch)?;
        Ok((d1, d2))
    }
}

pub fn exact_fim<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    subset: &Subset,
) -> Result<FimMatrix<T>> {
    Ok(LocalModel::new(spec, params, x, subset, &Limits::default())?.exact_fim())
}

/// Smooth scalar maps used for element-wise reparametrization `ξ = φ(θ)`.
/// Each is a global diffeomorphism of the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementwiseMap {
    Exp,
    Sinh,
    /// `θ + θ³`.
    Cubic,
}

impl ElementwiseMap {
    /// `(φ(θ), φ′(θ), φ″(θ))`.
    pub fn eval<T: Real>(self, th: T) -> (T, T, T) {
        match self {
            ElementwiseMap::Exp => {
                let e = th.exp();
                (e, e, e)
            }
            ElementwiseMap::Sinh => (th.sinh(), th.cosh(), th.sinh()),
            ElementwiseMap::Cubic => (
                th + th * th * th,
                T::one() + T::lit(3.0) * th * th,
                T::lit(6.0) * th,
            ),
        }
    }
}

/// Coordinate change `θ ↔ ξ` on the parameter subset.
#[derive(Debug, Clone, PartialEq)]
pub enum Reparam<T> {
    Identity,
    /// `ξ = M θ + c`.
    Affine { matrix: Array2<T>, offset: Array1<T> },
    Elementwise(ElementwiseMap),
}

/// First and second derivatives of `θ(ξ)` at the current point:
/// `a = ∂θ/∂ξ` and, when nonzero, the diagonal of `∂²θ_β/∂ξ_β²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateChange<T> {
    pub a: Array2<T>,
    pub g_diag: Option<Array1<T>>,
}

impl<T: Real> Reparam<T> {
    pub fn coordinate_change(&self, theta: &Array1<T>) -> Result<CoordinateChange<T>> {
        let n = theta.len();
        match self {
            Reparam::Identity => Ok(CoordinateChange {
                a: Array2::eye(n),
                g_diag: None,
            }),
            Reparam::Affine { matrix, offset } => {
                if matrix.dim() != (n, n) || offset.len() != n {
                    return Err(FimError::Dimension {
                        what: "affine reparametrization",
                        expected: n,
                        got: matrix.nrows(),
                    });
                }
                Ok(CoordinateChange {
                    a: invert(matrix)?,
                    g_diag: None,
                })
            }
            Reparam::Elementwise(map) => {
                let mut a = Array2::zeros((n, n));
                let mut g = Array1::zeros(n);
                for (k, &th) in theta.iter().enumerate() {
                    let (_, d1, d2) = map.eval(th);
                    if d1 == T::zero() || !d1.is_finite() {
                        return Err(FimError::SingularReparam);
                    }
                    a[[k, k]] = T::one() / d1;
                    g[k] = -d2 / (d1 * d1 * d1);
                }
                Ok(CoordinateChange { a, g_diag: Some(g) })
            }
        }
    }

    /// Maps subset coordinates `θ ↦ ξ`.
    pub fn forward(&self, theta: &Array1<T>) -> Array1<T> {
        match self {
            Reparam::Identity => theta.clone(),
            Reparam::Affine { matrix, offset } => matrix.dot(theta) + offset,
            Reparam::Elementwise(map) => theta.mapv(|t| map.eval(t).0),
        }
    }
}

impl<T: Real> CoordinateChange<T> {
    /// `Aᵀ F A`.
    pub fn congruence(&self, f: &Array2<T>) -> Array2<T> {
        self.a.t().dot(f).dot(&self.a)
    }

    /// `R^α = Σ_β J^α_β G^β` as `n_L × P_s × P_s` (zero when `G` vanishes).
    pub fn second_order_term(&self, jac: &Array2<T>) -> Array3<T> {
        let (n, ps) = jac.dim();
        let mut r = Array3::zeros((n, ps, ps));
        if let Some(g) = &self.g_diag {
            for alpha in 0..n {
                for b in 0..ps {
                    r[[alpha, b, b]] = jac[[alpha, b]] * g[b];
                }
            }
        }
        r
    }

    /// Output derivatives in ξ-coordinates: `J A` and `Aᵀ H^α A + R^α`.
    pub fn transform_derivatives(&self, jac: &Array2<T>, hess: &Array3<T>) -> (Array2<T>, Array3<T>) {
        let jx = jac.dot(&self.a);
        let mut hx = self.second_order_term(jac);
        for (alpha, mut slice) in hx.axis_iter_mut(Axis(0)).enumerate() {
            slice += &self.congruence(&hess.index_axis(Axis(0), alpha).to_owned());
        }
        (jx, hx)
    }
}

/// Re-expresses an estimate in ξ-coordinates.
///
/// `Î₁` and the exact FIM transform as covariant 2-tensors. `Î₂` picks up
/// `(η_α − t̄_α) J^α_β ∂²θ_β/∂ξ∂ξᵀ`, weighted by `1 − α` for the combined
/// estimator; `batch` supplies `t̄` and is ignored otherwise.
pub fn reparam_estimators<T: Real>(
    fim_est: &FimMatrix<T>,
    change: &CoordinateChange<T>,
    batch: &SampleBatch<T>,
    local: &LocalModel<T>,
) -> Result<FimMatrix<T>> {
    if fim_est.subset() != local.subset() {
        return Err(FimError::InvalidConfig(
            "estimate and local model use different subsets".into(),
        ));
    }
    let mut values = change.congruence(fim_est.values());
    let weight = match fim_est.provenance() {
        Provenance::Exact | Provenance::Estimator1 => None,
        Provenance::Estimator2 => Some(T::one()),
        Provenance::Combined(a) => Some(T::one() - T::lit(a)),
    };
    if let (Some(w), Some(g)) = (weight, &change.g_diag) {
        batch.check_dim(local.family())?;
        let coeff = &local.moments().eta - &batch.mean();
        let jc = local.jac().t().dot(&coeff);
        for b in 0..g.len() {
            values[[b, b]] += w * jc[b] * g[b];
        }
    }
    FimMatrix::new(values, fim_est.subset().clone(), fim_est.provenance())
}
