use thiserror::Error;

pub type Result<T> = std::result::Result<T, OqwError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OqwError {
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("not a density operator: {0}")]
    InvalidDensity(String),

    #[error("invalid vertex class `{label}`: {reason}")]
    InvalidClass { label: String, reason: String },

    #[error("invalid class probabilities: {0}")]
    InvalidProbabilities(String),

    #[error("invalid class field: {0}")]
    InvalidField(String),

    #[error("channel has no fixed point (residual {residual:e})")]
    NoFixedPoint { residual: f64 },

    #[error("invariant state of `{label}` is not unique (eigenvalue-1 multiplicity {multiplicity})")]
    NonUniqueInvariantState { label: String, multiplicity: usize },

    #[error("Poisson right-hand side is not in the image of I - Phi^dagger (residual {residual:e})")]
    PoissonNotSolvable { residual: f64 },

    #[error("walk is not reducible: {0}")]
    NotReducible(String),

    #[error("composed operators violate completeness by {deviation:e}")]
    CompletenessViolation { deviation: f64 },

    #[error("branch probabilities sum to {sum} (class `{label}`)")]
    BranchProbabilities { label: String, sum: f64 },

    #[error("window too small: boundary mass {mass:e} at step {step}")]
    WindowTooSmall { mass: f64, step: usize },

    #[error("site {site:?} lies outside the window")]
    OutsideWindow { site: Vec<i64> },

    #[error("equivalence check failed: max deviation {deviation:e}")]
    EquivalenceMismatch { deviation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl OqwError {
    /// True for errors caused by bad inputs rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            OqwError::DimensionMismatch { .. }
                | OqwError::InvalidMatrix(_)
                | OqwError::InvalidDensity(_)
                | OqwError::InvalidClass { .. }
                | OqwError::InvalidProbabilities(_)
                | OqwError::InvalidField(_)
                | OqwError::InvalidArgument(_)
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            OqwError::DimensionMismatch { .. } => "dimension_mismatch",
            OqwError::InvalidMatrix(_) => "invalid_matrix",
            OqwError::InvalidDensity(_) => "invalid_density",
            OqwError::InvalidClass { .. } => "invalid_class",
            OqwError::InvalidProbabilities(_) => "invalid_probabilities",
            OqwError::InvalidField(_) => "invalid_field",
            OqwError::NoFixedPoint { .. } => "no_fixed_point",
            OqwError::NonUniqueInvariantState { .. } => "non_unique_invariant_state",
            OqwError::PoissonNotSolvable { .. } => "poisson_not_solvable",
            OqwError::NotReducible(_) => "not_reducible",
            OqwError::CompletenessViolation { .. } => "completeness_violation",
            OqwError::BranchProbabilities { .. } => "branch_probabilities",
            OqwError::WindowTooSmall { .. } => "window_too_small",
            OqwError::OutsideWindow { .. } => "outside_window",
            OqwError::EquivalenceMismatch { .. } => "equivalence_mismatch",
            OqwError::InvalidArgument(_) => "invalid_argument",
        }
    }
}
