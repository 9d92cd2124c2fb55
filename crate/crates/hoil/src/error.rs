use thiserror::Error;

/// Errors surfaced by environment construction, training, and persistence.
#[derive(Debug, Error)]
pub enum HoilError {
    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:e})")]
    ValueIterationDiverged { sweeps: usize, residual: f64 },

    #[error("goal is unreachable when the blocked region is avoided")]
    GoalUnreachable,

    #[error("environment has no blocked region; cannot build an auxiliary policy")]
    NoBlockedRegion,

    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },

    #[error("selective head collapsed: empirical coverage {coverage:e} is too small")]
    CoverageCollapsed { coverage: f64 },

    #[error("density ratio undefined: both occupancies are zero")]
    EmptyDensityRatio,

    #[error("query budget overflow: used {used} of {max}")]
    BudgetOverflow { used: u64, max: u64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported report: {0}")]
    UnsupportedReport(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HoilError>;
