use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FimError {
    #[error("{family}: natural parameter h[{index}] = {value} is outside the domain ({reason})")]
    NaturalDomain {
        family: &'static str,
        index: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("{family}: mean parameter [{index}] = {value} is outside the valid range ({reason})")]
    MeanRange {
        family: &'static str,
        index: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported activation `{0}`: only C2 activations (identity, tanh, sigmoid, softplus) are allowed")]
    UnsupportedActivation(String),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("family `{0}` has infinite support; exact enumeration is unavailable")]
    InfiniteSupport(&'static str),

    #[error("enumeration of {0} outcomes exceeds the supported limit")]
    EnumerationTooLarge(usize),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("parameter index {index} out of range (P = {num_params})")]
    IndexOutOfRange { index: usize, num_params: usize },

    #[error("parameter subset contains duplicate index {0}")]
    DuplicateIndex(usize),

    #[error("invalid subset specification `{0}`")]
    InvalidSubsetSpec(String),

    #[error("{what} of size {size} exceeds the configured cap {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("alpha = {0} must lie in [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("eps = {0} must lie in (0, 1)")]
    EpsOutOfRange(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("reparametrization is not invertible")]
    SingularReparam,

    #[error("sample batch must contain at least one sample")]
    EmptyBatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T, E = FimError> = std::result::Result<T, E>;

impl FimError {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            FimError::NaturalDomain { .. } => "natural_domain",
            FimError::MeanRange { .. } => "mean_range",
            FimError::Dimension { .. } => "dimension_mismatch",
            FimError::UnsupportedActivation(_) => "unsupported_activation",
            FimError::UnknownFamily(_) => "unknown_family",
            FimError::InfiniteSupport(_) => "infinite_support",
            FimError::EnumerationTooLarge(_) => "enumeration_too_large",
            FimError::InvalidNetwork(_) => "invalid_network",
            FimError::IndexOutOfRange { .. } => "index_out_of_range",
            FimError::DuplicateIndex(_) => "duplicate_index",
            FimError::InvalidSubsetSpec(_) => "invalid_subset",
            FimError::CapExceeded { .. } => "cap_exceeded",
            FimError::AlphaOutOfRange(_) => "alpha_out_of_range",
            FimError::EpsOutOfRange(_) => "eps_out_of_range",
            FimError::NotSymmetric(_) => "not_symmetric",
            FimError::SingularReparam => "singular_reparam",
            FimError::EmptyBatch => "empty_batch",
            FimError::InvalidConfig(_) => "invalid_config",
            FimError::NonFinite(_) => "non_finite",
        }
    }

    /// Numerical failure rather than invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, FimError::NonFinite(_))
    }
}
