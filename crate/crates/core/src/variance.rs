//! Closed-form covariance of the FIM estimators and the bounds on it.
//!
//! For one sample, `Î₁ − I(θ) = Jᵀ(δδᵀ − I(h))J` and `Î₂ − I(θ) = −δ_a H^a`,
//! so the covariances are contractions of `K − I⊗I` with four Jacobians and of
//! `I(h)` with two Hessians. The cross-covariance needed by the combined
//! estimator is a contraction of the third cumulant. Every tensor here is the
//! single-sample tensor divided once by `N`.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2, Array4, Axis};
use serde::Serialize;

use crate::error::{FimError, Result};
use crate::fim::{check_alpha, CoordinateChange, Estimator, LocalModel};
use crate::linalg::{frobenius, max_abs, sum_abs};
use crate::scalar::Real;
use crate::subset::Subset;

/// Magic header of the binary tensor dump.
pub const BINARY_MAGIC: &[u8; 8] = b"FIMCOV01";

/// `P_s⁴` covariance tensor of an estimator over a parameter subset.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTensor<T> {
    values: Array4<T>,
    subset: Subset,
    n_samples: usize,
    estimator: Estimator,
    /// Set when the entries off the `(i,j,i,j)` diagonal come from the
    /// symmetrized cross term of the combined estimator.
    cross_term_symmetrized: bool,
}

impl<T: Real> CovTensor<T> {
    pub fn values(&self) -> &Array4<T> {
        &self.values
    }

    pub fn subset(&self) -> &Subset {
        &self.subset
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn cross_term_symmetrized(&self) -> bool {
        self.cross_term_symmetrized
    }

    pub fn side(&self) -> usize {
        self.subset.len()
    }
}

/// Element-wise variances `Var(Î)^{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarMatrix<T> {
    pub values: Array2<T>,
    pub n_samples: usize,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Frobenius1,
    Frobenius2,
    Elementwise1,
    Elementwise2,
    Linf1,
    Linf2,
    MomentK,
    MomentI,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Frobenius1 => "frobenius1",
            BoundKind::Frobenius2 => "frobenius2",
            BoundKind::Elementwise1 => "elementwise1",
            BoundKind::Elementwise2 => "elementwise2",
            BoundKind::Linf1 => "linf1",
            BoundKind::Linf2 => "linf2",
            BoundKind::MomentK => "moment_k",
            BoundKind::MomentI => "moment_i",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn new(kind: BoundKind, lhs: f64, rhs: f64) -> Self {
        BoundReport {
            kind,
            lhs,
            rhs,
            slack: rhs - lhs,
        }
    }

    /// `slack ≥ −tol · rhs`.
    pub fn holds(&self, tol: f64) -> bool {
        self.slack >= -tol * self.rhs.abs()
    }

    /// `lhs / rhs`, with `0/0` as `None` and `0/x` as 0.
    pub fn ratio(&self) -> Option<f64> {
        ratio(self.lhs, self.rhs)
    }
}

pub fn ratio(lhs: f64, rhs: f64) -> Option<f64> {
    if lhs == 0.0 {
        (rhs != 0.0).then_some(0.0)
    } else {
        Some(lhs / rhs)
    }
}

/// Contracts axis `k` of `t` with `m_k` (shape `n_k × p_k`) for all four axes:
/// `out[i,j,k,l] = Σ m0[a,i] m1[b,j] m2[c,k] m3[d,l] t[a,b,c,d]`.
///
/// Each round contracts the leading axis and appends the new one at the end,
/// so four rounds restore the axis order.
pub fn contract4<T: Real>(t: &Array4<T>, m: [&Array2<T>; 4]) -> Array4<T> {
    let mut cur = t.as_standard_layout().into_owned();
    for mk in m {
        let (d0, d1, d2, d3) = cur.dim();
        assert_eq!(d0, mk.nrows(), "contraction dimension");
        let flat = cur.into_shape_with_order((d0, d1 * d2 * d3)).expect("standard layout");
        let y = mk.t().dot(&flat);
        let p = mk.ncols();
        cur = y
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((d1, d2, d3, p))
            .expect("standard layout");
    }
    cur
}

fn uniform4<T: Real>(t: &Array4<T>, m: &Array2<T>) -> Array4<T> {
    contract4(t, [m, m, m, m])
}

/// `Σ_abcd T_abcd u_a v_b w_c z_d`.
fn quad_form4<T: Real>(t: &Array4<T>, u: &[T], v: &[T], w: &[T], z: &[T]) -> T {
    let mut acc = T::zero();
    for ((a, b, c, d), &x) in t.indexed_iter() {
        if x != T::zero() {
            acc += x * u[a] * v[b] * w[c] * z[d];
        }
    }
    acc
}

fn hess_flat<T: Real>(local: &LocalModel<T>) -> Array2<T> {
    let ps = local.subset().len();
    let n = local.family().dim_h();
    local
        .hess()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, ps * ps))
        .expect("standard layout")
}

fn scale_by_n<T: Real>(single: Array4<T>, n: usize) -> Result<Array4<T>> {
    if n == 0 {
        return Err(FimError::EmptyBatch);
    }
    Ok(single / T::from_usize_lossy(n))
}

fn column<T: Real>(m: &Array2<T>, i: usize) -> Vec<T> {
    m.column(i).to_vec()
}

/// Single-sample `Cov(Î₁)`: `J_ai J_bj J_ck J_dl (K − I⊗I)_abcd`.
pub fn single_cov1<T: Real>(local: &LocalModel<T>) -> Result<Array4<T>> {
    local.limits().check_tensor(local.subset().len())?;
    Ok(uniform4(&local.moments().excess_kurtosis_tensor(), local.jac()))
}

/// Single-sample `Cov(Î₂)`: `H^α_ij H^β_kl I_αβ`.
pub fn single_cov2<T: Real>(local: &LocalModel<T>) -> Result<Array4<T>> {
    let ps = local.subset().len();
    local.limits().check_tensor(ps)?;
    let hf = hess_flat(local);
    let m = hf.t().dot(&local.moments().fim_head).dot(&hf);
    Ok(m.into_shape_with_order((ps, ps, ps, ps)).expect("square"))
}

/// Single-sample `Cov(Î₁_ij, Î₂_kl) = −J_ai J_bj H^c_kl κ3_abc`.
pub fn single_cross12<T: Real>(local: &LocalModel<T>) -> Result<Array4<T>> {
    let ps = local.subset().len();
    local.limits().check_tensor(ps)?;
    let n = local.family().dim_h();
    let jac = local.jac();
    let c3 = &local.moments().cum3;
    // Y[i,j,c] = Σ_ab J_ai J_bj κ3_abc
    let mut y = Array2::<T>::zeros((ps * ps, n));
    for i in 0..ps {
        for j in 0..ps {
            for c in 0..n {
                let mut acc = T::zero();
                for a in 0..n {
                    for b in 0..n {
                        acc += jac[[a, i]] * jac[[b, j]] * c3[[a, b, c]];
                    }
                }
                y[[i * ps + j, c]] = acc;
            }
        }
    }
    let x = -y.dot(&hess_flat(local));
    Ok(x.into_shape_with_order((ps, ps, ps, ps)).expect("square"))
}

pub fn cov_estimator1<T: Real>(local: &LocalModel<T>, n: usize) -> Result<CovTensor<T>> {
    Ok(CovTensor {
        values: scale_by_n(single_cov1(local)?, n)?,
        subset: local.subset().clone(),
        n_samples: n,
        estimator: Estimator::One,
        cross_term_symmetrized: false,
    })
}

pub fn cov_estimator2<T: Real>(local: &LocalModel<T>, n: usize) -> Result<CovTensor<T>> {
    Ok(CovTensor {
        values: scale_by_n(single_cov2(local)?, n)?,
        subset: local.subset().clone(),
        n_samples: n,
        estimator: Estimator::Two,
        cross_term_symmetrized: false,
    })
}

/// `Cov(α Î₁ + (1−α) Î₂) = α² C₁ + (1−α)² C₂ + α(1−α)(X_ijkl + X_klij)` with
/// `X = Cov(Î₁, Î₂)`. The pair sum keeps the `(ij) ↔ (kl)` symmetry off the
/// diagonal; at `α ∈ {0, 1}` the single-estimator tensors are returned.
pub fn cov_combined<T: Real>(alpha: f64, local: &LocalModel<T>, n: usize) -> Result<CovTensor<T>> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(CovTensor {
            estimator: Estimator::Combined(alpha),
            ..cov_estimator1(local, n)?
        });
    }
    if alpha == 0.0 {
        return Ok(CovTensor {
            estimator: Estimator::Combined(alpha),
            ..cov_estimator2(local, n)?
        });
    }
    let a = T::lit(alpha);
    let b = T::one() - a;
    let x = single_cross12(local)?;
    let xt = x.view().permuted_axes([2, 3, 0, 1]);
    let mut single = single_cov1(local)? * (a * a) + single_cov2(local)? * (b * b);
    single.zip_mut_with(&(&x + &xt), |s, &c| *s += a * b * c);
    Ok(CovTensor {
        values: scale_by_n(single, n)?,
        subset: local.subset().clone(),
        n_samples: n,
        estimator: Estimator::Combined(alpha),
        cross_term_symmetrized: true,
    })
}

pub fn cov_for<T: Real>(which: Estimator, local: &LocalModel<T>, n: usize) -> Result<CovTensor<T>> {
    match which {
        Estimator::One => cov_estimator1(local, n),
        Estimator::Two => cov_estimator2(local, n),
        Estimator::Combined(a) => cov_combined(a, local, n),
    }
}

/// `Var^{ij} = Cov^{ijij}`.
pub fn var_matrix<T: Real>(cov: &CovTensor<T>) -> VarMatrix<T> {
    let p = cov.side();
    VarMatrix {
        values: Array2::from_shape_fn((p, p), |(i, j)| cov.values[[i, j, i, j]]),
        n_samples: cov.n_samples,
        estimator: cov.estimator,
    }
}

/// Element-wise variances without forming the `P_s⁴` tensor.
pub fn var_direct<T: Real>(which: Estimator, local: &LocalModel<T>, n: usize) -> Result<VarMatrix<T>> {
    if n == 0 {
        return Err(FimError::EmptyBatch);
    }
    let ps = local.subset().len();
    let jac = local.jac();
    let hess = local.hess();
    let m = local.moments();
    let excess = m.excess_kurtosis_tensor();
    let nh = local.family().dim_h();
    let v1 = |i: usize, j: usize| {
        let (u, v) = (column(jac, i), column(jac, j));
        quad_form4(&excess, &u, &v, &u, &v)
    };
    let v2 = |i: usize, j: usize| {
        let h: Vec<T> = (0..nh).map(|a| hess[[a, i, j]]).collect();
        let mut acc = T::zero();
        for a in 0..nh {
            for b in 0..nh {
                acc += h[a] * m.fim_head[[a, b]] * h[b];
            }
        }
        acc
    };
    let x = |i: usize, j: usize| {
        let mut acc = T::zero();
        for a in 0..nh {
            for b in 0..nh {
                for c in 0..nh {
                    acc += jac[[a, i]] * jac[[b, j]] * hess[[c, i, j]] * m.cum3[[a, b, c]];
                }
            }
        }
        -acc
    };
    let single = match which {
        Estimator::One => Array2::from_shape_fn((ps, ps), |(i, j)| v1(i, j)),
        Estimator::Two => Array2::from_shape_fn((ps, ps), |(i, j)| v2(i, j)),
        Estimator::Combined(alpha) => {
            check_alpha(alpha)?;
            let a = T::lit(alpha);
            let b = T::one() - a;
            let two = T::lit(2.0);
            Array2::from_shape_fn((ps, ps), |(i, j)| {
                a * a * v1(i, j) + b * b * v2(i, j) + two * a * b * x(i, j)
            })
        }
    };
    Ok(VarMatrix {
        values: single / T::from_usize_lossy(n),
        n_samples: n,
        estimator: which,
    })
}

/// Covariance in ξ-coordinates.
///
/// Estimator 1 is a covariant 4-tensor: `Cov_ξ = A⊗A⊗A⊗A · Cov_θ`. For
/// estimator 2 each sample in ξ is `−δ_α (Q^α + R^α)` with
/// `Q^α = Aᵀ H^α A` and `R^α = J^α_β ∂²θ_β/∂ξ∂ξᵀ`, so the contraction is
/// completed by `(1/N) I_αβ (Q^α R^β + R^α Q^β + R^α R^β)`.
pub fn cov_reparam<T: Real>(
    cov: &CovTensor<T>,
    change: &CoordinateChange<T>,
    local: &LocalModel<T>,
) -> Result<CovTensor<T>> {
    let ps = cov.side();
    if change.a.dim() != (ps, ps) || local.subset() != cov.subset() {
        return Err(FimError::Dimension {
            what: "reparametrization Jacobian",
            expected: ps,
            got: change.a.nrows(),
        });
    }
    let mut values = uniform4(&cov.values, &change.a);
    match cov.estimator {
        Estimator::One => {}
        Estimator::Two => {
            if change.g_diag.is_some() {
                let nh = local.family().dim_h();
                let hess = local.hess();
                let mut q = Array2::<T>::zeros((nh, ps * ps));
                for alpha in 0..nh {
                    let qa = change.congruence(&hess.index_axis(Axis(0), alpha).to_owned());
                    q.row_mut(alpha).assign(&Array1::from_iter(qa.iter().copied()));
                }
                let r = change
                    .second_order_term(local.jac())
                    .into_shape_with_order((nh, ps * ps))
                    .expect("standard layout");
                let i = &local.moments().fim_head;
                let ir = i.dot(&r);
                let corr = q.t().dot(&ir) + ir.t().dot(&q) + r.t().dot(&ir);
                let corr = corr.into_shape_with_order((ps, ps, ps, ps)).expect("square")
                    / T::from_usize_lossy(cov.n_samples);
                values += &corr;
            }
        }
        Estimator::Combined(_) => {
            return Err(FimError::InvalidConfig(
                "covariance reparametrization is defined for estimators 1 and 2".into(),
            ))
        }
    }
    Ok(CovTensor {
        values,
        subset: cov.subset.clone(),
        n_samples: cov.n_samples,
        estimator: cov.estimator,
        cross_term_symmetrized: cov.cross_term_symmetrized,
    })
}

fn gram_hessian<T: Real>(local: &LocalModel<T>) -> Array2<T> {
    let hf = hess_flat(local);
    hf.dot(&hf.t())
}

/// `‖Cov(Î₁)‖_F` without the `P_s⁴` tensor:
/// `‖C₁‖_F² = N⁻² Σ T_abcd T_a'b'c'd' G_aa' G_bb' G_cc' G_dd'` with `G = JJᵀ`.
pub fn frobenius_cov1<T: Real>(local: &LocalModel<T>, n: usize) -> T {
    let t = local.moments().excess_kurtosis_tensor();
    let g = local.jac().dot(&local.jac().t());
    let tg = uniform4(&t, &g);
    let sq = t.iter().zip(tg.iter()).map(|(&x, &y)| x * y).sum::<T>();
    sq.max(T::zero()).sqrt() / T::from_usize_lossy(n)
}

/// `‖Cov(Î₂)‖_F² = N⁻² tr(I Γ I Γ)` with `Γ_αβ = ⟨H^α, H^β⟩`.
pub fn frobenius_cov2<T: Real>(local: &LocalModel<T>, n: usize) -> T {
    let i = &local.moments().fim_head;
    let gamma = gram_hessian(local);
    let p = i.dot(&gamma);
    let sq = p.t().iter().zip(p.iter()).map(|(&x, &y)| x * y).sum::<T>();
    sq.max(T::zero()).sqrt() / T::from_usize_lossy(n)
}

fn check_single(which: Estimator) -> Result<bool> {
    match which {
        Estimator::One => Ok(true),
        Estimator::Two => Ok(false),
        Estimator::Combined(_) => Err(FimError::InvalidConfig(
            "norm bounds are stated for estimators 1 and 2".into(),
        )),
    }
}

/// Estimator 1: `‖J‖_F⁴ ‖K − I⊗I‖_F / N`; estimator 2: `‖H‖_F² ‖I‖_F / N`.
pub fn bound_frobenius<T: Real>(which: Estimator, local: &LocalModel<T>, n: usize) -> Result<BoundReport> {
    if n == 0 {
        return Err(FimError::EmptyBatch);
    }
    let nf = n as f64;
    let m = local.moments();
    Ok(if check_single(which)? {
        let j2 = frobenius(local.jac()).as_f64().powi(2);
        let rhs = j2 * j2 * frobenius(&m.excess_kurtosis_tensor()).as_f64() / nf;
        BoundReport::new(BoundKind::Frobenius1, frobenius_cov1(local, n).as_f64(), rhs)
    } else {
        let h = frobenius(local.hess()).as_f64();
        let rhs = h * h * frobenius(&m.fim_head).as_f64() / nf;
        BoundReport::new(BoundKind::Frobenius2, frobenius_cov2(local, n).as_f64(), rhs)
    })
}

/// Bound on one entry `(i, j, k, l)` (subset positions).
///
/// Estimator 1: `Π ‖∂_• h_L‖₂ · ‖K − I⊗I‖_F / N`; estimator 2:
/// `‖∂²_{ij} h_L‖₂ ‖∂²_{kl} h_L‖₂ ‖I‖_F / N`.
pub fn bound_elementwise<T: Real>(
    which: Estimator,
    idx: [usize; 4],
    local: &LocalModel<T>,
    n: usize,
) -> Result<BoundReport> {
    if n == 0 {
        return Err(FimError::EmptyBatch);
    }
    let ps = local.subset().len();
    if let Some(&bad) = idx.iter().find(|&&i| i >= ps) {
        return Err(FimError::IndexOutOfRange {
            index: bad,
            num_params: ps,
        });
    }
    let [i, j, k, l] = idx;
    let nf = n as f64;
    let m = local.moments();
    Ok(if check_single(which)? {
        let jac = local.jac();
        let t = m.excess_kurtosis_tensor();
        let entry = quad_form4(&t, &column(jac, i), &column(jac, j), &column(jac, k), &column(jac, l));
        let norms: f64 = idx.iter().map(|&c| frobenius(&jac.column(c)).as_f64()).product();
        BoundReport::new(
            BoundKind::Elementwise1,
            entry.as_f64().abs() / nf,
            norms * frobenius(&t).as_f64() / nf,
        )
    } else {
        let hess = local.hess();
        let nh = local.family().dim_h();
        let hij = Array1::from_iter((0..nh).map(|a| hess[[a, i, j]]));
        let hkl = Array1::from_iter((0..nh).map(|a| hess[[a, k, l]]));
        let entry = hij.dot(&m.fim_head.dot(&hkl));
        BoundReport::new(
            BoundKind::Elementwise2,
            entry.as_f64().abs() / nf,
            frobenius(&hij).as_f64() * frobenius(&hkl).as_f64() * frobenius(&m.fim_head).as_f64() / nf,
        )
    })
}

/// Estimator 1: `‖J‖_∞⁴ ‖K − I⊗I‖₁ / N`; estimator 2: `‖H‖_∞² ‖I‖₁ / N`,
/// with entrywise max and sum norms.
pub fn bound_linf<T: Real>(which: Estimator, local: &LocalModel<T>, n: usize) -> Result<BoundReport> {
    let nf = n as f64;
    let m = local.moments();
    Ok(if check_single(which)? {
        let lhs = max_abs(cov_estimator1(local, n)?.values()).as_f64();
        let j = max_abs(local.jac()).as_f64();
        let rhs = j.powi(4) * sum_abs(&m.excess_kurtosis_tensor()).as_f64() / nf;
        BoundReport::new(BoundKind::Linf1, lhs, rhs)
    } else {
        let lhs = max_abs(cov_estimator2(local, n)?.values()).as_f64();
        let h = max_abs(local.hess()).as_f64();
        let rhs = h * h * sum_abs(&m.fim_head).as_f64() / nf;
        BoundReport::new(BoundKind::Linf2, lhs, rhs)
    })
}

/// Diagonal moment bounds: `‖K − I⊗I‖_F ≤ √2 (Σ_a √K_aaaa + I_aa)²` and
/// `‖I‖_F ≤ tr I`.
pub fn bound_moments<T: Real>(m: &crate::expfam::MomentSet<T>) -> (BoundReport, BoundReport) {
    let d = m.dim();
    let s: f64 = (0..d)
        .map(|a| m.cmom4[[a, a, a, a]].as_f64().max(0.0).sqrt() + m.fim_head[[a, a]].as_f64())
        .sum();
    let trace: f64 = (0..d).map(|a| m.fim_head[[a, a]].as_f64()).sum();
    (
        BoundReport::new(
            BoundKind::MomentK,
            frobenius(&m.excess_kurtosis_tensor()).as_f64(),
            std::f64::consts::SQRT_2 * s * s,
        ),
        BoundReport::new(BoundKind::MomentI, frobenius(&m.fim_head).as_f64(), trace),
    )
}

/// Every bound of one estimator: Frobenius, L∞ (when the tensor fits the cap),
/// and the element-wise bound at each `(i, j, i, j)`.
pub fn all_bounds<T: Real>(which: Estimator, local: &LocalModel<T>, n: usize) -> Result<Vec<BoundReport>> {
    let mut out = vec![bound_frobenius(which, local, n)?];
    if local.limits().check_tensor(local.subset().len()).is_ok() {
        out.push(bound_linf(which, local, n)?);
    }
    let ps = local.subset().len();
    for i in 0..ps {
        for j in 0..ps {
            out.push(bound_elementwise(which, [i, j, i, j], local, n)?);
        }
    }
    Ok(out)
}

/// Radius `r` with `P(‖Î − I‖_F ≥ r) ≤ ε`, by Chebyshev on
/// `E‖Î − I‖_F² = Σ_ij Var^{ij}`.
pub fn chebyshev_radius<T: Real>(var: &VarMatrix<T>, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(FimError::EpsOutOfRange(eps));
    }
    let total: f64 = var.values.iter().map(|v| v.as_f64()).sum();
    Ok((total.max(0.0) / eps).sqrt())
}

/// `f64` formatted with 17 significant digits (round-trips exactly).
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    format!("{v:.16e}")
}

/// Rows `i,j,k,l,value` with flat parameter indices.
pub fn write_csv<T: Real, W: Write>(cov: &CovTensor<T>, mut w: W) -> io::Result<()> {
    let idx = cov.subset.indices();
    writeln!(w, "i,j,k,l,value")?;
    for ((a, b, c, d), v) in cov.values.indexed_iter() {
        writeln!(w, "{},{},{},{},{}", idx[a], idx[b], idx[c], idx[d], format_f64(v.as_f64()))?;
    }
    Ok(())
}

/// `FIMCOV01`, `u64` side, `u64` N, side `u64` flat indices, then the values
/// as row-major little-endian `f64`.
pub fn write_binary<T: Real, W: Write>(cov: &CovTensor<T>, mut w: W) -> io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(cov.side() as u64).to_le_bytes())?;
    w.write_all(&(cov.n_samples as u64).to_le_bytes())?;
    for &i in cov.subset.indices() {
        w.write_all(&(i as u64).to_le_bytes())?;
    }
    for v in cov.values.iter() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Raw contents of a binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDump {
    pub indices: Vec<usize>,
    pub n_samples: usize,
    pub values: Array4<f64>,
}

pub fn read_binary<R: Read>(mut r: R) -> io::Result<BinaryDump> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic header"));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> io::Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let side = next(&mut r)? as usize;
    let n_samples = next(&mut r)? as usize;
    let indices = (0..side).map(|_| next(&mut r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
    let count = side.checked_pow(4).ok_or_else(|| bad("tensor too large"))?;
    let vals = (0..count)
        .map(|_| next(&mut r).map(f64::from_bits))
        .collect::<io::Result<Vec<_>>>()?;
    let values = Array4::from_shape_vec((side, side, side, side), vals).map_err(|_| bad("shape"))?;
    Ok(BinaryDump {
        indices,
        n_samples,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::FamilyModel;
    use crate::network::{Activation, NetworkSpec, ParamSet};
    use crate::subset::Limits;
    use ndarray::array;

    fn local(layers: Vec<usize>, act: Activation, fam: FamilyModel, seed: u64, x: Array1<f64>) -> LocalModel<f64> {
        let sp = NetworkSpec::new(layers, act, fam).unwrap();
        let p = ParamSet::init_uniform(&sp, seed);
        LocalModel::new(&sp, &p, &x, &Subset::all(sp.num_params()), &Limits::default()).unwrap()
    }

    #[test]
    fn contract4_matches_naive() {
        let t = Array4::from_shape_fn((2, 2, 2, 2), |(a, b, c, d)| (a + 2 * b + 3 * c + 5 * d) as f64 - 4.0);
        let m0 = array![[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]];
        let m1 = array![[0.4], [2.0]];
        let out = contract4(&t, [&m0, &m1, &m0, &m1]);
        assert_eq!(out.dim(), (3, 1, 3, 1));
        for ((i, j, k, l), &v) in out.indexed_iter() {
            let mut want = 0.0;
            for ((a, b, c, d), &x) in t.indexed_iter() {
                want += m0[[a, i]] * m1[[b, j]] * m0[[c, k]] * m1[[d, l]] * x;
            }
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_dim1_cov1_closed_form() {
        let m = local(vec![2, 1], Activation::Identity, FamilyModel::normal(1), 3, array![0.5, -2.0]);
        let c = cov_estimator1(&m, 10).unwrap();
        let j = m.jac().row(0).to_owned();
        for ((i, k, l, q), &v) in c.values().indexed_iter() {
            let want = 2.0 / 10.0 * j[i] * j[k] * j[l] * j[q];
            assert!((v - want).abs() < 1e-14);
        }
        let var = var_matrix(&c);
        for ((i, k), &v) in var.values.indexed_iter() {
            assert!((v - 0.2 * j[i] * j[i] * j[k] * j[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn depth_one_cov2_vanishes() {
        let m = local(vec![2, 2], Activation::Identity, FamilyModel::bernoulli(2), 5, array![1.0, 0.3]);
        assert!(cov_estimator2(&m, 4).unwrap().values().iter().all(|&v| v == 0.0));
        let r = bound_frobenius(Estimator::Two, &m, 4).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn scaling_is_one_over_n() {
        let m = local(vec![2, 3, 1], Activation::Tanh, FamilyModel::poisson(1), 6, array![0.2, 0.4]);
        let one = cov_estimator2(&m, 1).unwrap();
        let seven = cov_estimator2(&m, 7).unwrap();
        assert_eq!(seven.values(), &(one.values() / 7.0));
    }

    #[test]
    fn combined_endpoints_bit_equal() {
        let m = local(vec![2, 2, 2], Activation::Sigmoid, FamilyModel::bernoulli(2), 8, array![0.2, -0.4]);
        assert_eq!(cov_combined(1.0, &m, 3).unwrap().values(), cov_estimator1(&m, 3).unwrap().values());
        assert_eq!(cov_combined(0.0, &m, 3).unwrap().values(), cov_estimator2(&m, 3).unwrap().values());
        assert!(cov_combined(-0.1, &m, 3).is_err());
        let mid = cov_combined(0.3, &m, 3).unwrap();
        assert!(mid.cross_term_symmetrized());
        let v = mid.values();
        for ((i, j, k, l), &x) in v.indexed_iter() {
            assert!((x - v[[k, l, i, j]]).abs() < 1e-15);
            assert!((x - v[[j, i, k, l]]).abs() < 1e-15);
        }
    }

    #[test]
    fn normal_head_has_no_cross_term() {
        let m = local(vec![2, 3, 1], Activation::Tanh, FamilyModel::normal(1), 9, array![1.0, 0.5]);
        let a = 0.4;
        let mid = cov_combined(a, &m, 5).unwrap();
        let want = cov_estimator1(&m, 5).unwrap().values() * (a * a) + cov_estimator2(&m, 5).unwrap().values() * ((1.0 - a) * (1.0 - a));
        for (x, y) in mid.values().iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn direct_variances_match_tensor_diagonal() {
        let m = local(vec![2, 2, 2], Activation::Softplus, FamilyModel::bernoulli(2), 10, array![0.9, -0.1]);
        for est in [Estimator::One, Estimator::Two, Estimator::Combined(0.25)] {
            let via = var_matrix(&cov_for(est, &m, 6).unwrap());
            let direct = var_direct(est, &m, 6).unwrap();
            for (x, y) in via.values.iter().zip(direct.values.iter()) {
                assert!((x - y).abs() < 1e-14, "{est}");
            }
            assert!(direct.values.iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn gram_frobenius_matches_tensor() {
        let m = local(vec![3, 2, 2], Activation::Tanh, FamilyModel::poisson(2), 11, array![0.3, 0.1, -0.5]);
        let c1 = frobenius(cov_estimator1(&m, 2).unwrap().values());
        let c2 = frobenius(cov_estimator2(&m, 2).unwrap().values());
        assert!((frobenius_cov1(&m, 2) - c1).abs() < 1e-12 * c1.max(1.0));
        assert!((frobenius_cov2(&m, 2) - c2).abs() < 1e-12 * c2.max(1.0));
    }

    #[test]
    fn moment_bounds_examples() {
        let m = FamilyModel::normal(1).moments(&array![0.3]).unwrap();
        let (k, i) = bound_moments(&m);
        assert!((k.lhs - 2.0).abs() < 1e-15);
        assert!((k.rhs - std::f64::consts::SQRT_2 * (3f64.sqrt() + 1.0).powi(2)).abs() < 1e-12);
        assert_eq!(i.lhs, i.rhs);
    }

    #[test]
    fn chebyshev_radius_behaviour() {
        let m = local(vec![2, 1], Activation::Identity, FamilyModel::normal(1), 12, array![1.0, 1.0]);
        let r1 = chebyshev_radius(&var_direct(Estimator::One, &m, 10).unwrap(), 0.1).unwrap();
        let r4 = chebyshev_radius(&var_direct(Estimator::One, &m, 40).unwrap(), 0.1).unwrap();
        assert!((r1 / r4 - 2.0).abs() < 1e-12);
        assert!(chebyshev_radius(&var_direct(Estimator::One, &m, 10).unwrap(), 1.0).is_err());
    }

    #[test]
    fn binary_round_trip_and_csv() {
        let m = local(vec![1, 1], Activation::Identity, FamilyModel::poisson(1), 13, array![0.7]);
        let c = cov_estimator1(&m, 3).unwrap();
        let mut buf = Vec::new();
        write_binary(&c, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"FIMCOV01");
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.values, *c.values());
        assert_eq!(back.indices, vec![0, 1]);
        assert_eq!(back.n_samples, 3);
        let mut csv = Vec::new();
        write_csv(&c, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 17);
        let last: f64 = text.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(last, c.values()[[1, 1, 1, 1]]);
    }

    #[test]
    fn tensor_cap_is_enforced() {
        let sp = NetworkSpec::new(vec![6, 6, 1], Activation::Tanh, FamilyModel::bernoulli(1)).unwrap();
        let p = ParamSet::<f64>::init_uniform(&sp, 1);
        let m = LocalModel::new(&sp, &p, &Array1::zeros(6), &Subset::all(sp.num_params()), &Limits::default()).unwrap();
        assert!(matches!(cov_estimator1(&m, 1), Err(FimError::CapExceeded { cap: 48, .. })));
        assert!(var_direct(Estimator::One, &m, 1).is_ok());
    }
}
