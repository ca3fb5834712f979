//! Small dense linear algebra used at "desk scale": cyclic Jacobi symmetric
//! eigensolver, Gauss-Jordan inverse, tensor norms and deterministic sums.
//!
//! Everything here is generic over [`Real`] so the same code serves `f32`
//! and `f64` builds.

use ndarray::{Array1, Array2, ArrayBase, Data, Dimension, Ix2};

use crate::error::{FimError, Result};
use crate::scalar::Real;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Array1<T>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<T>,
}

/// Cyclic Jacobi eigensolver. Only the symmetric part of `a` is used.
///
/// Jacobi is slow for large matrices but attains high relative accuracy on the
/// small blocks this crate works with, and its output is a deterministic
/// function of the input.
pub fn symmetric_eigen<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> SymmetricEigen<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen requires a square matrix");
    let half = T::lit(0.5);
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| half * (a[[i, j]] + a[[j, i]]));
    let mut v = Array2::<T>::eye(n);

    let total: T = m.iter().map(|&x| x * x).sum();
    let threshold = T::epsilon() * T::epsilon() * total;

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off <= threshold || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(T::one()));
                let c = T::one() / t.hypot(T::one());
                let s = t * c;
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
                m[[p, q]] = T::zero();
                m[[q, p]] = T::zero();
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[i, i]]
            .partial_cmp(&m[[j, j]])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_iter(order.iter().map(|&k| m[[k, k]]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    SymmetricEigen { values, vectors }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigvalsh<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> Array1<T> {
    symmetric_eigen(a).values
}

/// Largest absolute eigenvalue of a symmetric matrix (0 for an empty one).
pub fn spectral_radius<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> T {
    eigvalsh(a).iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Largest singular value, via the smaller of the two Gram matrices.
pub fn max_singular_value<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let gram = if a.nrows() <= a.ncols() {
        a.dot(&a.t())
    } else {
        a.t().dot(a)
    };
    let top = eigvalsh(&gram)
        .iter()
        .fold(T::zero(), |acc, &x| acc.max(x));
    top.max(T::zero()).sqrt()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Returns [`FimError::SingularReparam`] when a pivot falls below
/// `n * eps * max|a|`.
pub fn invert<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> Result<Array2<T>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(FimError::Dimension {
            what: "square matrix",
            expected: n,
            got: a.ncols(),
        });
    }
    let scale = max_abs(a);
    if scale == T::zero() && n > 0 {
        return Err(FimError::SingularReparam);
    }
    let tol = T::from_usize_lossy(n.max(1)) * T::epsilon() * scale;
    let mut m = a.to_owned();
    let mut inv = Array2::<T>::eye(n);
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if m[[r, col]].abs() > m[[pivot, col]].abs() {
                pivot = r;
            }
        }
        if m[[pivot, col]].abs() <= tol {
            return Err(FimError::SingularReparam);
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let p = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[[r, col]];
            if f == T::zero() {
                continue;
            }
            for k in 0..n {
                m[[r, k]] = m[[r, k]] - f * m[[col, k]];
                inv[[r, k]] = inv[[r, k]] - f * inv[[col, k]];
            }
        }
    }
    Ok(inv)
}

/// Frobenius (entrywise L2) norm of any array.
pub fn frobenius<T: Real, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Entrywise L-infinity norm (max absolute entry).
pub fn max_abs<T: Real, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Entrywise L1 norm.
pub fn sum_abs<T: Real, S: Data<Elem = T>, D: Dimension>(a: &ArrayBase<S, D>) -> T {
    a.iter().map(|&x| x.abs()).sum()
}

/// Largest `|a_ij - a_ji|`.
pub fn max_asymmetry<T: Real, S: Data<Elem = T>>(a: &ArrayBase<S, Ix2>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n.min(a.ncols()) {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Pairwise (cascade) summation in a fixed order, so that reductions are
/// reproducible independent of how the inputs were produced.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = array![[4.0f64, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]];
        let eig = symmetric_eigen(&a);
        let d = Array2::from_diag(&eig.values);
        let back = eig.vectors.dot(&d).dot(&eig.vectors.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(eig.values[0] <= eig.values[1] && eig.values[1] <= eig.values[2]);
        let vtv = eig.vectors.t().dot(&eig.vectors);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[[i, j]] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn eigen_of_diagonal_and_empty() {
        let a = array![[-1.0, 0.0], [0.0, 2.0]];
        assert_eq!(eigvalsh(&a).to_vec(), vec![-1.0, 2.0]);
        let empty = Array2::<f64>::zeros((0, 0));
        assert_eq!(eigvalsh(&empty).len(), 0);
        assert_eq!(spectral_radius(&a), 2.0);
    }

    #[test]
    fn singular_value_matches_known() {
        // diag(3, 1) rotated on the left keeps singular values.
        let (c, s) = (0.6f64, 0.8f64);
        let r = array![[c, -s], [s, c]];
        let a = r.dot(&array![[3.0f64, 0.0], [0.0, 1.0]]);
        assert!((max_singular_value(&a) - 3.0).abs() < 1e-13);
        let wide = array![[1.0f64, 2.0, 2.0]];
        assert!((max_singular_value(&wide) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_and_singular_detection() {
        let a = array![[2.0f64, 1.0], [1.0, 3.0]];
        let inv = invert(&a).unwrap();
        let id = a.dot(&inv);
        assert!((id[[0, 0]] - 1.0).abs() < 1e-14 && id[[0, 1]].abs() < 1e-14);
        let sing = array![[1.0f64, 2.0], [2.0, 4.0]];
        assert_eq!(invert(&sing), Err(FimError::SingularReparam));
    }

    #[test]
    fn pairwise_sum_matches_naive_for_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }

    #[test]
    fn f32_eigen_works() {
        let a: Array2<f32> = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = eigvalsh(&a);
        assert!((ev[0] - 1.0).abs() < 1e-6 && (ev[1] - 3.0).abs() < 1e-6);
    }
}
