use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid range for {name}: [{lo}, {hi}]")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },

    #[error("cell ({x}, {y}) is outside a {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("requested {requested} tasks but the grid only has {cells} cells")]
    TooManyTasks { requested: usize, cells: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no demonstrated state-action pairs")]
    EmptyDemos,

    #[error("divergence domain is empty")]
    EmptyDomain,

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("gradient check failed at iteration {iteration}: analytic {analytic:e}, numeric {numeric:e}")]
    GradientCheck {
        iteration: usize,
        analytic: f64,
        numeric: f64,
    },

    #[error("zero variance input to correlation")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short tag used in result files for failed sweep cells.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::NonConvergence { .. } => "non_convergence",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::ZeroVariance => "zero_variance",
            Error::GradientCheck { .. } => "gradient_check",
            Error::EmptyDemos => "empty_demos",
            Error::EmptyDomain => "empty_domain",
            _ => "error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
