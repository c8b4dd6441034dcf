use thiserror::Error;

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("non-finite linear predictor {0}")]
    NonFinite(f64),

    #[error("unknown link function `{0}` (expected logit, probit, loglog, cloglog or cauchit)")]
    UnknownLink(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("point {point}: category {category} has probability {value:e} below the 1e-12 floor")]
    DegeneratePoint {
        point: usize,
        category: usize,
        value: f64,
    },

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("allocation has a singular information matrix")]
    InvalidStart,

    #[error("profile undefined: weight of point {0} is 1")]
    ProfileUndefined(usize),

    #[error("budget {budget} is below {categories}; enumerate the pair directly")]
    BudgetTooSmall { budget: u64, categories: usize },

    #[error("infeasible: n = {n_total} runs cannot support {needed} parameters' worth of points")]
    Infeasible { n_total: u64, needed: usize },

    #[error("reference allocation is singular")]
    SingularReference,

    #[error("unsupported problem shape: {0}")]
    Unsupported(String),

    #[error("rank-deficient support {0:?}")]
    RankDeficient(Vec<usize>),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unknown fixture `{0}` (expected odor, wine, toxicity or polysilicon)")]
    UnknownFixture(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },
}

impl DesignError {
    /// True for failures caused by unreadable or malformed inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            DesignError::Io { .. } | DesignError::Parse { .. } | DesignError::UnknownLink(_) | DesignError::UnknownFixture(_)
        )
    }
}
