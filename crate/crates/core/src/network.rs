//! Feed-forward networks with an exponential-family head.
//!
//! Hidden layers compute `h_{l+1} = σ(W_l h̄_l)` and the output layer is
//! linear, `h_L = W_{L-1} h̄_{L-1}`, where `h̄ = (h, 1)` and the last column of
//! each `W_l` is the bias. Parameters are flattened layer-major, then
//! row-major within `W_l`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};
use crate::expfam::FamilyModel;
use crate::linalg::{frobenius, max_singular_value};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::subset::{Limits, Subset};

/// Salt mixed into the seed for weight initialization so that init streams
/// never coincide with sampling streams.
const INIT_SALT: u64 = 0x5EED_1A17_0000_0001;

/// Element-wise activations. All are C² with `|σ′| ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl FromStr for Activation {
    type Err = FimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            other => Err(FimError::UnsupportedActivation(other.to_string())),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = FimError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> Self {
        a.name().to_string()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic function as `exp(−softplus(−z))`: no branches and full relative
/// precision in both tails.
fn logistic<T: Real>(z: T) -> T {
    (-softplus(-z)).exp()
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        }
    }

    pub fn eval<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => logistic(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// `(σ(z), σ′(z), σ″(z))`.
    pub fn eval_with_derivatives<T: Real>(self, z: T) -> (T, T, T) {
        let two = T::lit(2.0);
        match self {
            Activation::Identity => (z, T::one(), T::zero()),
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = T::one() - t * t;
                (t, d1, -two * t * d1)
            }
            Activation::Sigmoid => {
                let s = logistic(z);
                let d1 = s * (T::one() - s);
                (s, d1, d1 * (T::one() - two * s))
            }
            Activation::Softplus => {
                let s = logistic(z);
                (softplus(z), s, s * (T::one() - s))
            }
        }
    }

    pub fn derivative<T: Real>(self, z: T) -> T {
        self.eval_with_derivatives(z).1
    }
}

/// Architecture: layer widths, activation and output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    family: FamilyModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecRepr {
    layers: Vec<usize>,
    activation: Activation,
    family: FamilyModel,
}

impl TryFrom<SpecRepr> for NetworkSpec {
    type Error = FimError;

    fn try_from(r: SpecRepr) -> Result<Self> {
        NetworkSpec::new(r.layers, r.activation, r.family)
    }
}

impl From<NetworkSpec> for SpecRepr {
    fn from(s: NetworkSpec) -> Self {
        SpecRepr {
            layers: s.layer_sizes,
            activation: s.activation,
            family: s.family,
        }
    }
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, family: FamilyModel) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(FimError::InvalidNetwork(
                "need at least an input and an output layer".into(),
            ));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(FimError::InvalidNetwork(format!("layer {pos} has width 0")));
        }
        let out = *layer_sizes.last().expect("non-empty");
        if family.dim_h() != out {
            return Err(FimError::Dimension {
                what: "output width vs family dimension",
                expected: family.dim_h(),
                got: out,
            });
        }
        Ok(NetworkSpec {
            layer_sizes,
            activation,
            family,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn family(&self) -> &FamilyModel {
        &self.family
    }

    /// Number of weight matrices `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.depth()]
    }

    /// Shape `(n_{l+1}, n_l + 1)` of `W_l`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l + 1], self.layer_sizes[l] + 1)
    }

    pub fn num_params(&self) -> usize {
        (0..self.depth())
            .map(|l| {
                let (r, c) = self.weight_shape(l);
                r * c
            })
            .sum()
    }

    /// Flat index range of `W_l`.
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        let start: usize = (0..l)
            .map(|k| {
                let (r, c) = self.weight_shape(k);
                r * c
            })
            .sum();
        let (r, c) = self.weight_shape(l);
        start..start + r * c
    }

    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        (0..self.depth()).map(|l| self.layer_range(l)).collect()
    }

    pub fn flat_index(&self, layer: usize, row: usize, col: usize) -> Result<usize> {
        if layer >= self.depth() {
            return Err(FimError::IndexOutOfRange {
                index: layer,
                num_params: self.depth(),
            });
        }
        let (r, c) = self.weight_shape(layer);
        if row >= r || col >= c {
            return Err(FimError::IndexOutOfRange {
                index: row * c + col,
                num_params: r * c,
            });
        }
        Ok(self.layer_range(layer).start + row * c + col)
    }

    /// Inverse of [`NetworkSpec::flat_index`].
    pub fn locate(&self, index: usize) -> Result<ParamLocation> {
        let mut start = 0;
        for layer in 0..self.depth() {
            let (r, c) = self.weight_shape(layer);
            if index < start + r * c {
                let off = index - start;
                return Ok(ParamLocation {
                    layer,
                    row: off / c,
                    col: off % c,
                });
            }
            start += r * c;
        }
        Err(FimError::IndexOutOfRange {
            index,
            num_params: start,
        })
    }

    pub fn check_input<T>(&self, x: &Array1<T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(FimError::Dimension {
                what: "input x",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// `(layer, row, col)` address of a flat parameter; `col == n_layer` is the
/// bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLocation {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

/// Weights `W_0 … W_{L-1}`, each `n_{l+1} × (n_l + 1)` with the bias last.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    weights: Vec<Array2<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamSet {
            weights: (0..spec.depth()).map(|l| Array2::zeros(spec.weight_shape(l))).collect(),
        }
    }

    pub fn from_weights(spec: &NetworkSpec, weights: Vec<Array2<T>>) -> Result<Self> {
        if weights.len() != spec.depth() {
            return Err(FimError::Dimension {
                what: "number of weight matrices",
                expected: spec.depth(),
                got: weights.len(),
            });
        }
        for (l, w) in weights.iter().enumerate() {
            let (r, c) = spec.weight_shape(l);
            if w.dim() != (r, c) {
                return Err(FimError::InvalidNetwork(format!(
                    "W{l} has shape {:?}, expected ({r}, {c})",
                    w.dim()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(FimError::NonFinite("weights"));
            }
        }
        Ok(ParamSet { weights })
    }

    pub fn from_flat(spec: &NetworkSpec, theta: &[T]) -> Result<Self> {
        if theta.len() != spec.num_params() {
            return Err(FimError::Dimension {
                what: "flat parameter vector",
                expected: spec.num_params(),
                got: theta.len(),
            });
        }
        let weights = (0..spec.depth())
            .map(|l| {
                let r = spec.layer_range(l);
                Array2::from_shape_vec(spec.weight_shape(l), theta[r].to_vec())
                    .expect("range length equals matrix size")
            })
            .collect();
        Self::from_weights(spec, weights)
    }

    /// Fan-based uniform init: each entry of `W_l` drawn from
    /// `U(−a, a)` with `a = √(6 / (n_l + n_{l+1}))`.
    pub fn init_uniform(spec: &NetworkSpec, seed: u64) -> Self {
        let weights = (0..spec.depth())
            .map(|l| {
                let n_in = spec.layer_sizes()[l];
                let n_out = spec.layer_sizes()[l + 1];
                let a = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut rng = RngStream::at(seed ^ INIT_SALT, l as u64, 0);
                Array2::from_shape_simple_fn(spec.weight_shape(l), || {
                    T::lit(a * (2.0 * rng.uniform() - 1.0))
                })
            })
            .collect();
        ParamSet { weights }
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn weight(&self, l: usize) -> &Array2<T> {
        &self.weights[l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Array2<T> {
        &mut self.weights[l]
    }

    /// `W_l⁻`: `W_l` without its bias column.
    pub fn weight_no_bias(&self, l: usize) -> ArrayView2<'_, T> {
        let w = &self.weights[l];
        w.slice(s![.., ..w.ncols() - 1])
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn to_f64(&self) -> ParamSet<f64> {
        ParamSet {
            weights: self.weights.iter().map(|w| w.mapv(|v| v.as_f64())).collect(),
        }
    }
}

/// Layer values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// `h_0 = x, …, h_L`.
    pub h: Vec<Array1<T>>,
    /// `h̄_l = (h_l, 1)` for `l < L`.
    pub hbar: Vec<Array1<T>>,
    /// Pre-activations `z_l = W_l h̄_l` for `l < L`; `z_{L-1} = h_L`.
    pub z: Vec<Array1<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn output(&self) -> &Array1<T> {
        self.h.last().expect("trace has at least one layer")
    }
}

/// Backpropagation factors. `b[l]` is `n_L × n_l` for `l = 0..=L`; `d[l]`
/// holds the diagonal of `D_l` for `l < L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackpropTrace<T> {
    pub b: Vec<Array2<T>>,
    pub d: Vec<Array1<T>>,
}

fn extend_with_one<T: Real>(h: &Array1<T>) -> Array1<T> {
    let mut out = Array1::from_elem(h.len() + 1, T::one());
    out.slice_mut(s![..h.len()]).assign(h);
    out
}

pub fn forward<T: Real>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Array1<T>) -> Result<ForwardTrace<T>> {
    spec.check_input(x)?;
    let depth = spec.depth();
    let mut h = vec![x.clone()];
    let mut hbar = Vec::with_capacity(depth);
    let mut z = Vec::with_capacity(depth);
    for l in 0..depth {
        let hb = extend_with_one(&h[l]);
        let zl = params.weight(l).dot(&hb);
        let next = if l + 1 < depth {
            zl.mapv(|v| spec.activation().eval(v))
        } else {
            zl.clone()
        };
        hbar.push(hb);
        z.push(zl);
        h.push(next);
    }
    Ok(ForwardTrace { h, hbar, z })
}

/// Network output `h_L(x)`.
pub fn output<T: Real>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Array1<T>) -> Result<Array1<T>> {
    Ok(forward(spec, params, x)?.h.pop().expect("non-empty"))
}

pub fn backprop_factors<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    trace: &ForwardTrace<T>,
) -> BackpropTrace<T> {
    let depth = spec.depth();
    let d: Vec<Array1<T>> = (0..depth)
        .map(|l| {
            if l + 1 == depth {
                Array1::ones(spec.output_dim())
            } else {
                trace.z[l].mapv(|v| spec.activation().derivative(v))
            }
        })
        .collect();
    let mut b = vec![Array2::zeros((0, 0)); depth + 1];
    b[depth] = Array2::eye(spec.output_dim());
    for l in (0..depth).rev() {
        let scaled = &b[l + 1] * &d[l].view().insert_axis(Axis(0));
        b[l] = scaled.dot(&params.weight_no_bias(l));
    }
    BackpropTrace { b, d }
}

/// `∂h_L/∂θ` restricted to `subset`, from `∂h_L^a/∂W_l = D_l B_{l+1}ᵀ e_a h̄_lᵀ`.
pub fn jacobian_subset<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    subset: &Subset,
) -> Result<Array2<T>> {
    check_subset(spec, subset)?;
    let trace = forward(spec, params, x)?;
    let bp = backprop_factors(spec, params, &trace);
    Ok(jacobian_from_traces(spec, &trace, &bp, subset))
}

pub(crate) fn jacobian_from_traces<T: Real>(
    spec: &NetworkSpec,
    trace: &ForwardTrace<T>,
    bp: &BackpropTrace<T>,
    subset: &Subset,
) -> Array2<T> {
    let n_out = spec.output_dim();
    let mut jac = Array2::zeros((n_out, subset.len()));
    for (s, &i) in subset.indices().iter().enumerate() {
        let loc = spec.locate(i).expect("validated subset");
        let scale = bp.d[loc.layer][loc.row] * trace.hbar[loc.layer][loc.col];
        let b_next = &bp.b[loc.layer + 1];
        for a in 0..n_out {
            jac[[a, s]] = b_next[[a, loc.row]] * scale;
        }
    }
    jac
}

/// Full `n_L × P` Jacobian of `θ ↦ h_L`.
pub fn jacobian_hl<T: Real>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Array1<T>) -> Result<Array2<T>> {
    jacobian_subset(spec, params, x, &Subset::all(spec.num_params()))
}

fn check_subset(spec: &NetworkSpec, subset: &Subset) -> Result<()> {
    if subset.num_params() != spec.num_params() {
        return Err(FimError::Dimension {
            what: "subset parameter count",
            expected: spec.num_params(),
            got: subset.num_params(),
        });
    }
    Ok(())
}

/// First and second derivatives of `h_L` with respect to the parameters in
/// `subset`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDerivatives<T> {
    pub h_l: Array1<T>,
    /// `n_L × P_s`.
    pub jac: Array2<T>,
    /// `n_L × P_s × P_s`, each slice exactly symmetric.
    pub hess: Array3<T>,
}

/// Exact second-order forward propagation.
///
/// Carries `∂h_l/∂θ_s` and `∂²h_l/∂θ_s∂θ_u` through every layer for the
/// subset parameters only. With `z = W⁻h + b`, the product rule contributes
/// `h̄_l[c]` to `∂z_r/∂[W_l]_{rc}` and `∂h_l[c]/∂θ_u` to the mixed second
/// derivative; the activation step is `σ″ ∂z⊗∂z + σ′ ∂²z`.
pub fn output_derivatives<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    subset: &Subset,
    limits: &Limits,
) -> Result<OutputDerivatives<T>> {
    check_subset(spec, subset)?;
    limits.check_params(subset.len())?;
    spec.check_input(x)?;
    let trace = forward(spec, params, x)?;
    let ps = subset.len();
    let locs: Vec<ParamLocation> = subset
        .indices()
        .iter()
        .map(|&i| spec.locate(i).expect("validated subset"))
        .collect();
    let depth = spec.depth();

    let mut jh = Array2::<T>::zeros((spec.input_dim(), ps));
    let mut hh = Array3::<T>::zeros((spec.input_dim(), ps, ps));
    for l in 0..depth {
        let w = params.weight_no_bias(l);
        let (n_next, n_cur) = w.dim();
        let mut jz = w.dot(&jh);
        let flat = hh
            .view()
            .into_shape_with_order((n_cur, ps * ps))
            .expect("contiguous");
        let mut hz = w
            .dot(&flat)
            .into_shape_with_order((n_next, ps, ps))
            .expect("contiguous");
        for (s, loc) in locs.iter().enumerate() {
            if loc.layer != l {
                continue;
            }
            jz[[loc.row, s]] += trace.hbar[l][loc.col];
            if loc.col < n_cur {
                for u in 0..ps {
                    let g = jh[[loc.col, u]];
                    if g != T::zero() {
                        hz[[loc.row, s, u]] += g;
                        hz[[loc.row, u, s]] += g;
                    }
                }
            }
        }
        if l + 1 < depth {
            for r in 0..n_next {
                let (_, d1, d2) = spec.activation().eval_with_derivatives(trace.z[l][r]);
                for s in 0..ps {
                    let js = jz[[r, s]];
                    for u in 0..ps {
                        hz[[r, s, u]] = d2 * js * jz[[r, u]] + d1 * hz[[r, s, u]];
                    }
                }
                jz.row_mut(r).mapv_inplace(|v| d1 * v);
            }
        }
        jh = jz;
        hh = hz;
    }
    for a in 0..spec.output_dim() {
        for s in 0..ps {
            for u in (s + 1)..ps {
                hh[[a, u, s]] = hh[[a, s, u]];
            }
        }
    }
    Ok(OutputDerivatives {
        h_l: trace.output().clone(),
        jac: jh,
        hess: hh,
    })
}

/// Full `n_L × P × P` Hessian of `θ ↦ h_L` (subject to the parameter cap).
pub fn hessian_hl<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    limits: &Limits,
) -> Result<Array3<T>> {
    Ok(output_derivatives(spec, params, x, &Subset::all(spec.num_params()), limits)?.hess)
}

/// Log-likelihood `tᵀh_L − F(h_L)`, dropping the base measure.
pub fn loglik<T: Real>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Array1<T>, t: &Array1<T>) -> Result<T> {
    let h = output(spec, params, x)?;
    check_stat(spec, t)?;
    Ok(t.dot(&h) - spec.family().log_partition(&h)?)
}

fn check_stat<T>(spec: &NetworkSpec, t: &Array1<T>) -> Result<()> {
    if t.len() != spec.family().dim_t() {
        return Err(FimError::Dimension {
            what: "sufficient statistic t",
            expected: spec.family().dim_t(),
            got: t.len(),
        });
    }
    Ok(())
}

/// Score `Jᵀ(t − η)` over the subset.
pub fn loglik_grad<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    t: &Array1<T>,
    subset: &Subset,
) -> Result<Array1<T>> {
    check_stat(spec, t)?;
    let h = output(spec, params, x)?;
    let eta = spec.family().mean_params(&h)?;
    let jac = jacobian_subset(spec, params, x, subset)?;
    Ok(jac.t().dot(&(t - &eta)))
}

/// `Σ_a (t_a − η_a) ∂²h_L^a − Jᵀ I(h_L) J` over the subset.
pub fn loglik_hessian<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    t: &Array1<T>,
    subset: &Subset,
    limits: &Limits,
) -> Result<Array2<T>> {
    check_stat(spec, t)?;
    let der = output_derivatives(spec, params, x, subset, limits)?;
    let m = spec.family().moments(&der.h_l)?;
    let resid = t - &m.eta;
    let mut out = -der.jac.t().dot(&m.fim_head).dot(&der.jac);
    for (a, &r) in resid.iter().enumerate() {
        out.scaled_add(r, &der.hess.index_axis(Axis(0), a));
    }
    Ok(out)
}

/// Norms of the layer-`l` output Jacobian block against their weight-norm
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianNormReport {
    pub layer: usize,
    pub hbar_norm: f64,
    /// `‖B_{l+1} D_l‖_F · ‖h̄_l‖₂`, which equals `‖∂h_L/∂W_l‖_F`.
    pub lhs_frobenius: f64,
    pub rhs_frobenius: f64,
    /// `s_max(B_{l+1} D_l) · ‖h̄_l‖₂`, the spectral norm of the 3-tensor block.
    pub lhs_spectral: f64,
    pub rhs_spectral: f64,
}

/// The Frobenius bound multiplies `‖W_i⁻‖_F` over `i > l`. For `l = L−1` the
/// block is `I ⊗ h̄`, whose norm is `√n_L ‖h̄‖`, so the factor there is `√n_L`
/// rather than the empty product; the spectral factor is `s_max(I) = 1`.
pub fn jacobian_norm_report<T: Real>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    x: &Array1<T>,
    l: usize,
) -> Result<JacobianNormReport> {
    let depth = spec.depth();
    if l >= depth {
        return Err(FimError::IndexOutOfRange {
            index: l,
            num_params: depth,
        });
    }
    let trace = forward(spec, params, x)?;
    let bp = backprop_factors(spec, params, &trace);
    let bd = &bp.b[l + 1] * &bp.d[l].view().insert_axis(Axis(0));
    let hbar_norm = frobenius(&trace.hbar[l]).as_f64();
    let (rhs_f, rhs_s) = if l + 1 == depth {
        ((spec.output_dim() as f64).sqrt(), 1.0)
    } else {
        ((l + 1)..depth).fold((1.0, 1.0), |(f, s), i| {
            let w = params.weight_no_bias(i);
            (f * frobenius(&w).as_f64(), s * max_singular_value(&w).as_f64())
        })
    };
    Ok(JacobianNormReport {
        layer: l,
        hbar_norm,
        lhs_frobenius: frobenius(&bd).as_f64() * hbar_norm,
        rhs_frobenius: rhs_f * hbar_norm,
        lhs_spectral: max_singular_value(&bd).as_f64() * hbar_norm,
        rhs_spectral: rhs_s * hbar_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff;
    use ndarray::array;

    fn spec(layers: Vec<usize>, act: Activation) -> NetworkSpec {
        let n = *layers.last().unwrap();
        NetworkSpec::new(layers, act, FamilyModel::normal(n)).unwrap()
    }

    #[test]
    fn relu_is_rejected() {
        assert_eq!(
            "relu".parse::<Activation>(),
            Err(FimError::UnsupportedActivation("relu".into()))
        );
        let j = r#"{"layers":[1,1],"activation":"relu","family":{"family":"normal","dim":1}}"#;
        assert!(serde_json::from_str::<NetworkSpec>(j).is_err());
    }

    #[test]
    fn flat_index_round_trip() {
        let sp = spec(vec![3, 4, 2], Activation::Tanh);
        assert_eq!(sp.num_params(), 4 * 4 + 2 * 5);
        for i in 0..sp.num_params() {
            let loc = sp.locate(i).unwrap();
            assert_eq!(sp.flat_index(loc.layer, loc.row, loc.col).unwrap(), i);
        }
        assert!(sp.locate(sp.num_params()).is_err());
        let p = ParamSet::<f64>::init_uniform(&sp, 9);
        let back = ParamSet::from_flat(&sp, &p.to_flat()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let sp = spec(vec![3, 5, 2], Activation::Tanh);
        let a = ParamSet::<f64>::init_uniform(&sp, 1);
        assert_eq!(a, ParamSet::init_uniform(&sp, 1));
        assert_ne!(a, ParamSet::init_uniform(&sp, 2));
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.weight(0).iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn forward_small_examples() {
        let sp = spec(vec![1, 1], Activation::Identity);
        let p = ParamSet::from_weights(&sp, vec![array![[2.0, 1.0]]]).unwrap();
        assert_eq!(output(&sp, &p, &array![3.0]).unwrap(), array![7.0]);

        let sp = spec(vec![2, 3, 2], Activation::Tanh);
        let mut p = ParamSet::<f64>::zeros(&sp);
        p.weight_mut(1).column_mut(3).assign(&array![0.5, -1.5]);
        assert_eq!(output(&sp, &p, &array![4.0, -2.0]).unwrap(), array![0.5, -1.5]);
        assert!(output(&sp, &p, &array![1.0]).is_err());
    }

    #[test]
    fn trace_recurrences_reproduce_exactly() {
        let sp = spec(vec![3, 4, 2], Activation::Softplus);
        let p = ParamSet::<f64>::init_uniform(&sp, 3);
        let tr = forward(&sp, &p, &array![0.3, -0.8, 1.1]).unwrap();
        let z0 = p.weight(0).dot(&tr.hbar[0]);
        assert_eq!(z0.mapv(|v| Activation::Softplus.eval(v)), tr.h[1]);
        assert_eq!(p.weight(1).dot(&tr.hbar[1]), tr.h[2]);
    }

    #[test]
    fn backprop_identity_two_layer() {
        let sp = spec(vec![2, 3, 2], Activation::Identity);
        let p = ParamSet::<f64>::init_uniform(&sp, 4);
        let tr = forward(&sp, &p, &array![1.0, 2.0]).unwrap();
        let bp = backprop_factors(&sp, &p, &tr);
        assert_eq!(bp.b[2], Array2::<f64>::eye(2));
        assert_eq!(bp.b[1], p.weight_no_bias(1).to_owned());
        assert_eq!(bp.b[0].dim(), (2, 2));
    }

    #[test]
    fn depth_one_jacobian_row() {
        let sp = spec(vec![1, 1], Activation::Identity);
        let p = ParamSet::from_weights(&sp, vec![array![[0.7, -0.2]]]).unwrap();
        let j = jacobian_hl(&sp, &p, &array![2.5]).unwrap();
        assert_eq!(j, array![[2.5, 1.0]]);
        let h = hessian_hl(&sp, &p, &array![2.5], &Limits::default()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_kills_layer0_weight_columns() {
        let sp = spec(vec![2, 3, 1], Activation::Identity);
        let p = ParamSet::<f64>::init_uniform(&sp, 5);
        let j = jacobian_hl(&sp, &p, &array![0.0, 0.0]).unwrap();
        for i in sp.layer_range(0) {
            if sp.locate(i).unwrap().col < 2 {
                assert_eq!(j[[0, i]], 0.0);
            }
        }
    }

    #[test]
    fn identity_two_layer_hessian_blocks() {
        let sp = spec(vec![2, 3, 2], Activation::Identity);
        let p = ParamSet::<f64>::init_uniform(&sp, 6);
        let x = array![0.4, -1.7];
        let h = hessian_hl(&sp, &p, &x, &Limits::default()).unwrap();
        let hbar0 = array![0.4, -1.7, 1.0];
        let (r0, r1) = (sp.layer_range(0), sp.layer_range(1));
        for a in 0..2 {
            for i in r0.clone() {
                for k in r0.clone() {
                    assert_eq!(h[[a, i, k]], 0.0);
                }
            }
            for i in r1.clone() {
                for k in r1.clone() {
                    assert_eq!(h[[a, i, k]], 0.0);
                }
            }
            for j in 0..3 {
                for k in 0..3 {
                    let w1 = sp.flat_index(1, a, j).unwrap();
                    let w0 = sp.flat_index(0, j, k).unwrap();
                    assert!((h[[a, w1, w0]] - hbar0[k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn forward_mode_jacobian_matches_backprop_lemma() {
        for act in Activation::ALL {
            let sp = spec(vec![3, 4, 3, 2], act);
            let p = ParamSet::<f64>::init_uniform(&sp, 11);
            let x = array![0.5, -1.0, 0.25];
            let all = Subset::all(sp.num_params());
            let der = output_derivatives(&sp, &p, &x, &all, &Limits::default()).unwrap();
            let j = jacobian_subset(&sp, &p, &x, &all).unwrap();
            for (a, b) in der.jac.iter().zip(j.iter()) {
                assert!((a - b).abs() < 1e-14, "{act}");
            }
        }
    }

    #[test]
    fn backprop_factor_matches_finite_differences() {
        let sp = spec(vec![2, 3, 3, 2], Activation::Sigmoid);
        let p = ParamSet::<f64>::init_uniform(&sp, 12);
        let tr = forward(&sp, &p, &array![0.9, -0.4]).unwrap();
        let bp = backprop_factors(&sp, &p, &tr);
        // Map h_1 → h_L through the remaining layers.
        let tail = |h1: &[f64]| {
            let mut h = Array1::from(h1.to_vec());
            for l in 1..3 {
                let z = p.weight(l).dot(&extend_with_one(&h));
                h = if l < 2 { z.mapv(|v| Activation::Sigmoid.eval(v)) } else { z };
            }
            h
        };
        let fd = numdiff::jacobian(&tail, tr.h[1].as_slice().unwrap(), 1e-4);
        let err = numdiff::relative_error(fd.iter(), bp.b[1].iter(), 1e-300);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn loglik_grad_small_cases() {
        let sp = spec(vec![1, 1], Activation::Identity);
        let p = ParamSet::from_weights(&sp, vec![array![[0.5, 0.25]]]).unwrap();
        let x = array![2.0];
        let all = Subset::all(2);
        let g = loglik_grad(&sp, &p, &x, &array![3.0], &all).unwrap();
        assert_eq!(g, array![(3.0 - 1.25) * 2.0, 3.0 - 1.25]);
        let eta = array![1.25];
        assert!(loglik_grad(&sp, &p, &x, &eta, &all).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_norm_report_last_layer_is_tight() {
        let sp = NetworkSpec::new(vec![3, 4, 3], Activation::Tanh, FamilyModel::bernoulli(3)).unwrap();
        let p = ParamSet::<f64>::init_uniform(&sp, 21);
        let x = array![0.1, 0.2, -0.3];
        let rep = jacobian_norm_report(&sp, &p, &x, 1).unwrap();
        assert!((rep.lhs_frobenius - 3f64.sqrt() * rep.hbar_norm).abs() < 1e-12);
        assert!((rep.lhs_frobenius - rep.rhs_frobenius).abs() < 1e-12);
        assert!((rep.lhs_spectral - rep.rhs_spectral).abs() < 1e-12);
        let j = jacobian_hl(&sp, &p, &x).unwrap();
        let block = j.slice(s![.., sp.layer_range(0)]).to_owned();
        let rep0 = jacobian_norm_report(&sp, &p, &x, 0).unwrap();
        assert!((frobenius(&block) - rep0.lhs_frobenius).abs() < 1e-12);
        assert!(rep0.lhs_frobenius <= rep0.rhs_frobenius && rep0.lhs_spectral <= rep0.rhs_spectral);
    }

    #[test]
    fn identity_spectral_bound_is_tight() {
        let sp = spec(vec![2, 3, 2], Activation::Identity);
        let p = ParamSet::<f64>::init_uniform(&sp, 8);
        let rep = jacobian_norm_report(&sp, &p, &array![1.0, -1.0], 0).unwrap();
        assert!((rep.lhs_spectral - rep.rhs_spectral).abs() <= 1e-12 * rep.rhs_spectral);
    }

    #[test]
    fn stable_logistic_tails() {
        assert!(logistic(-800.0f64) > 0.0 || logistic(-800.0f64) == 0.0);
        assert_eq!(logistic(800.0f64), 1.0);
        assert!((logistic(-30.0f64) - (-30.0f64).exp() / (1.0 + (-30.0f64).exp())).abs() < 1e-25);
        assert!(softplus(1000.0f64).is_finite());
    }
}
