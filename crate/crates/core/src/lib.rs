//! Fisher information of feed-forward networks with exponential-family
//! outputs.
//!
//! The crate computes the exact Fisher information matrix (FIM) as a pullback
//! `Jᵀ I(h_L) J`, the two sampling estimators built from score outer products
//! and from negative Hessians, and the closed-form covariance of both
//! estimators together with norm bounds, spectral guarantees and Monte Carlo
//! validation.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, which every validation path uses.

pub mod error;
pub mod expfam;
pub mod fim;
pub mod linalg;
pub mod montecarlo;
pub mod network;
pub mod numdiff;
pub mod rng;
pub mod scalar;
pub mod spectrum;
pub mod subset;
pub mod variance;

pub use error::{FimError, Result};
pub use expfam::{FamilyKind, FamilyModel};
pub use network::{Activation, NetworkSpec};
pub use rng::{RngStream, StreamId};
pub use scalar::Real;
pub use subset::{Limits, Subset};

pub type Params = network::ParamSet<f64>;
pub type Moments = expfam::MomentSet<f64>;
pub type Fim = fim::FimMatrix<f64>;
pub type Batch = fim::SampleBatch<f64>;
pub type Cov = variance::CovTensor<f64>;
pub type Var = variance::VarMatrix<f64>;
