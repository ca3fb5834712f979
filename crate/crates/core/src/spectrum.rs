//! Spectral guarantees for the estimators: the probability that `Î₂` is
//! positive semidefinite and a certified floor on its smallest eigenvalue.

use ndarray::{Array2, Array3, Axis};
use serde::Serialize;

use crate::error::{FimError, Result};
use crate::fim::{LocalModel, SampleBatch};
use crate::linalg::{eigvalsh, max_abs, max_asymmetry, spectral_radius};
use crate::scalar::Real;

/// λ_min(I(θ)) below this makes the p.s.d. probability bound uninformative.
pub const LAMBDA_MIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub tol: f64,
    pub is_psd: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_per_output: Option<Vec<f64>>,
}

/// p.s.d. probability bound, or the sentinel when `I(θ)` is (numerically)
/// singular on the subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PsdBound {
    Value { bound: f64 },
    Uninformative { lambda_min: f64 },
}

impl PsdBound {
    pub fn value(&self) -> Option<f64> {
        match self {
            PsdBound::Value { bound } => Some(*bound),
            PsdBound::Uninformative { .. } => None,
        }
    }
}

/// Spectral radius of each output Hessian slice `∂²h_L^a`.
pub fn rho_per_output<T: Real>(hess: &Array3<T>) -> Vec<f64> {
    hess.axis_iter(Axis(0))
        .map(|slice| spectral_radius(&slice).as_f64())
        .collect()
}

pub fn spectrum_report<T: Real>(matrix: &Array2<T>, hess: Option<&Array3<T>>) -> Result<SpectrumReport> {
    if matrix.nrows() != matrix.ncols() {
        return Err(FimError::Dimension {
            what: "square matrix",
            expected: matrix.nrows(),
            got: matrix.ncols(),
        });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(FimError::NonFinite("spectrum input"));
    }
    let asym = max_asymmetry(matrix).as_f64();
    if asym > 1e-9 * max_abs(matrix).as_f64().max(1.0) {
        return Err(FimError::NotSymmetric(asym));
    }
    let eigenvalues: Vec<f64> = eigvalsh(matrix).iter().map(|v| v.as_f64()).collect();
    let lambda_min = eigenvalues.first().copied().unwrap_or(0.0);
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    let tol = 1e-10 * lambda_max.abs().max(1.0);
    Ok(SpectrumReport {
        is_psd: lambda_min >= -tol,
        eigenvalues,
        lambda_min,
        lambda_max,
        tol,
        rho_per_output: hess.map(rho_per_output),
    })
}

/// `1 − n_L ‖ρ‖₂² λ_max(I(h_L)) / (N λ_min²(I(θ)))`, returned unclamped.
pub fn psd_probability_bound<T: Real>(local: &LocalModel<T>, n: usize) -> Result<PsdBound> {
    if n == 0 {
        return Err(FimError::EmptyBatch);
    }
    let rho = rho_per_output(local.hess());
    let rho2: f64 = rho.iter().map(|r| r * r).sum();
    if rho2 == 0.0 {
        return Ok(PsdBound::Value { bound: 1.0 });
    }
    let exact = eigvalsh(&local.exact_fim().into_values());
    let lambda_min = exact.first().map(|v| v.as_f64()).unwrap_or(0.0);
    if lambda_min < LAMBDA_MIN_FLOOR {
        return Ok(PsdBound::Uninformative { lambda_min });
    }
    let head_max = eigvalsh(&local.moments().fim_head)
        .last()
        .map(|v| v.as_f64())
        .unwrap_or(0.0);
    let nl = local.family().dim_h() as f64;
    let bound = 1.0 - nl * rho2 * head_max / (n as f64 * lambda_min * lambda_min);
    Ok(PsdBound::Value { bound })
}

/// `−Σ_a ρ(∂²h_L^a) |η_a − t̄_a|`, a lower bound on `λ_min(Î₂)`.
pub fn min_eig_bound<T: Real>(local: &LocalModel<T>, batch: &SampleBatch<T>) -> f64 {
    let mean = batch.mean();
    let eta = &local.moments().eta;
    rho_per_output(local.hess())
        .iter()
        .zip(eta.iter().zip(mean.iter()))
        .map(|(r, (&e, &t))| -r * (e - t).as_f64().abs())
        .sum()
}

/// Same as [`min_eig_bound`] with precomputed radii.
pub fn min_eig_bound_with(rho: &[f64], eta: &[f64], mean: &[f64]) -> f64 {
    rho.iter()
        .zip(eta.iter().zip(mean))
        .map(|(r, (e, t))| -r * (e - t).abs())
        .sum()
}
