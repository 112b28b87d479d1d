use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix {0} is not symmetric")]
    NotSymmetric(String),
    #[error("parameter Hessian H_{index} is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { index: usize, min_eigenvalue: f64 },
    #[error("objective is not strongly convex over the parameter box (m = {m})")]
    NotStronglyConvex { m: f64 },
    #[error("constraint matrix does not have full row rank")]
    RankDeficient,
    #[error("steplength {alpha} outside [{lower}, {upper}]")]
    SteplengthOutOfRange { alpha: f64, lower: f64, upper: f64 },
    #[error("invalid steplength interval [{lower}, {upper}]: {reason}")]
    InvalidSteplengthInterval {
        lower: f64,
        upper: f64,
        reason: &'static str,
    },
    #[error("contraction_rate >= 1 (gamma = {gamma})")]
    ContractionNotBelowOne { gamma: f64 },
    #[error("constraint set is not smooth; route through smoothing")]
    NonSmoothConstraint,
    #[error("empty box")]
    EmptyBox,
    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("tube recursion infeasible: {0}")]
    Infeasible(String),
    #[error("tube leaves the iterate box at k = {k}, coordinate {coord}")]
    TubeEscapesIterateBox { k: usize, coord: usize },
    #[error("quadrature error budget exceeded: {eps} > {cap}")]
    QuadratureBudgetExceeded { eps: f64, cap: f64 },
    #[error("unsupported problem structure: {0}")]
    Unsupported(&'static str),
}

impl Error {
    /// Short machine-readable tag used in serialized reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::NotPositiveSemidefinite { .. } => "not_psd",
            Error::NotStronglyConvex { .. } => "not_strongly_convex",
            Error::RankDeficient => "rank_deficient",
            Error::SteplengthOutOfRange { .. } => "steplength_out_of_range",
            Error::InvalidSteplengthInterval { .. } => "invalid_steplength_interval",
            Error::ContractionNotBelowOne { .. } => "infeasible",
            Error::NonSmoothConstraint => "non_smooth_constraint",
            Error::EmptyBox => "empty_box",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Singular(_) => "singular",
            Error::Infeasible(_) => "infeasible",
            Error::TubeEscapesIterateBox { .. } => "tube_escapes_iterate_box",
            Error::QuadratureBudgetExceeded { .. } => "quadrature_budget_exceeded",
            Error::Unsupported(_) => "unsupported",
        }
    }
}
