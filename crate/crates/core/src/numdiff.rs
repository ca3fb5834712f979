//! Finite-difference oracles.
//!
//! Every partial derivative is a nested fourth-order central stencil, so a
//! derivative tensor of order `k` costs `5^k` evaluations per entry. These are
//! slow and ill-conditioned at high order; they exist to cross-check the
//! closed forms, never to replace them.

use ndarray::{Array1, Array2, Array3, ArrayD, Dimension, IxDyn};

const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

/// Step for first derivatives.
pub const STEP_FIRST_ORDER: f64 = 1e-5;
/// Step for second derivatives; rounding error grows like `ε/h²`.
pub const STEP_SECOND_ORDER: f64 = 1e-3;
/// Relative step for third and fourth derivatives.
pub const STEP_HIGH_ORDER: f64 = 1e-2;

/// Step for a derivative of the given order at coordinate value `x`.
pub fn default_step(order: usize, x: f64) -> f64 {
    if order <= 1 {
        STEP_FIRST_ORDER
    } else if order == 2 {
        STEP_SECOND_ORDER
    } else {
        STEP_HIGH_ORDER * x.abs().max(1.0)
    }
}

/// `∂^k f / ∂x_{idx[0]} … ∂x_{idx[k-1]}` at `x`, with one step per nesting
/// level.
pub fn nested_partial<F>(f: &F, x: &mut [f64], idx: &[usize], steps: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    match idx.split_first() {
        None => f(x),
        Some((&i, rest)) => {
            let h = steps[0];
            let x0 = x[i];
            let mut acc = 0.0;
            for &(offset, weight) in &STENCIL {
                x[i] = x0 + offset * h;
                acc += weight * nested_partial(f, x, rest, &steps[1..]);
            }
            x[i] = x0;
            acc / (12.0 * h)
        }
    }
}

/// Fourth-order central second derivative along one coordinate.
pub fn second_diagonal<F>(f: &F, x: &mut [f64], i: usize, h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let x0 = x[i];
    let mut eval = |o: f64| {
        x[i] = x0 + o * h;
        f(x)
    };
    let v = -eval(2.0) + 16.0 * eval(1.0) - 30.0 * eval(0.0) + 16.0 * eval(-1.0) - eval(-2.0);
    x[i] = x0;
    v / (12.0 * h * h)
}

/// Full derivative tensor of order `order` of a scalar function.
pub fn derivative_tensor<F>(f: &F, x: &[f64], order: usize) -> ArrayD<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x.len();
    let shape = vec![n; order];
    let mut out = ArrayD::zeros(IxDyn(&shape));
    let mut work = x.to_vec();
    for (idx, v) in out.indexed_iter_mut() {
        let idx: Vec<usize> = idx.slice().to_vec();
        let steps: Vec<f64> = idx.iter().map(|&i| default_step(order, x[i])).collect();
        *v = if order == 2 && idx[0] == idx[1] {
            second_diagonal(f, &mut work, idx[0], steps[0])
        } else {
            nested_partial(f, &mut work, &idx, &steps)
        };
    }
    out
}

/// Jacobian `∂g_a/∂x_i` of a vector function.
pub fn jacobian<G>(g: &G, x: &[f64], step: f64) -> Array2<f64>
where
    G: Fn(&[f64]) -> Array1<f64>,
{
    let m = g(x).len();
    let n = x.len();
    let mut out = Array2::zeros((m, n));
    let mut work = x.to_vec();
    for i in 0..n {
        let x0 = work[i];
        let mut acc = Array1::<f64>::zeros(m);
        for &(offset, weight) in &STENCIL {
            work[i] = x0 + offset * step;
            acc.scaled_add(weight, &g(&work));
        }
        work[i] = x0;
        out.column_mut(i).assign(&(acc / (12.0 * step)));
    }
    out
}

/// Hessians `∂²g_a/∂x_i∂x_j` of a vector function, one slice per output.
pub fn hessian<G>(g: &G, x: &[f64], step: f64) -> Array3<f64>
where
    G: Fn(&[f64]) -> Array1<f64>,
{
    let m = g(x).len();
    let n = x.len();
    let mut out = Array3::zeros((m, n, n));
    for a in 0..m {
        let fa = |y: &[f64]| g(y)[a];
        let mut work = x.to_vec();
        for i in 0..n {
            out[[a, i, i]] = second_diagonal(&fa, &mut work, i, step);
            for j in (i + 1)..n {
                let v = nested_partial(&fa, &mut work, &[i, j], &[step, step]);
                out[[a, i, j]] = v;
                out[[a, j, i]] = v;
            }
        }
    }
    out
}

/// `max|a − b| / max(max|b|, floor)`: a norm-wise relative error that stays
/// meaningful when `b` has exact zeros.
pub fn relative_error<'a, I>(a: I, b: I, floor: f64) -> f64
where
    I: IntoIterator<Item = &'a f64>,
{
    let (mut diff, mut scale) = (0.0f64, floor);
    for (x, y) in a.into_iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    diff / scale
}
