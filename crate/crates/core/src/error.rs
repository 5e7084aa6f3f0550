use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("unknown flow id {0}")]
    UnknownFlow(usize),

    #[error("unknown flow `{0}`")]
    UnknownFlowName(String),

    #[error("unknown matchfield id {0}")]
    UnknownMatchfield(usize),

    #[error("unknown matchfield `{0}`")]
    UnknownLabel(String),

    #[error("duplicate matchfield label `{0}`")]
    DuplicateLabel(String),

    #[error("duplicate flow name `{0}`")]
    DuplicateFlowName(String),

    #[error("flow `{0}` has no matchfields")]
    EmptyFlow(String),

    #[error("flow `{flow}` has the same matchfields as `{other}`")]
    DuplicateFlow { flow: String, other: String },

    #[error("flow `{flow}` has matchfields that are a subset of `{other}`")]
    SubsetFlow { flow: String, other: String },

    #[error("flow `{flow}` has matchfields that are a superset of `{other}`")]
    SupersetFlow { flow: String, other: String },

    #[error("unknown concept id {0}")]
    UnknownConcept(usize),

    #[error("unknown query id {0}")]
    UnknownQuery(usize),

    #[error("unknown query `{0}`")]
    UnknownQueryLabel(String),

    #[error("query `{0}` has no matchfields")]
    EmptyQuery(String),

    #[error("invalid bench spec: {0}")]
    BenchSpec(String),

    #[error("could not draw {wanted} distinct flow entries within {budget} redraws")]
    RetryBudget { wanted: usize, budget: usize },

    #[error("oracle size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            name,
            detail: detail.into(),
        }
    }
}
