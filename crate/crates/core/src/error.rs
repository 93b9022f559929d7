use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown account id {0}")]
    UnknownAccount(u64),
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("slant table is empty")]
    EmptySlantTable,
    #[error("duplicate slant pattern {0:?}")]
    DuplicatePattern(String),
    #[error("no cached resolution for {0}")]
    ResolverMiss(String),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("column {0:?} has zero variance")]
    ZeroVariance(String),
    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("need more observations than parameters (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("logit fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    LogitNonConvergence {
        iterations: usize,
        gradient_norm: f64,
        alpha: Vec<f64>,
        gamma: Vec<f64>,
    },
    #[error("eigensolver did not converge; residual norms {residuals:?}")]
    EigenNonConvergence { residuals: Vec<f64> },
    #[error("outlet {0:?} has an empty follower set")]
    EmptyFollowerSet(String),
    #[error("anchor labels tie in community {community}: {labels}")]
    AnchorTie { community: usize, labels: String },
    #[error("missing anchors for {0}")]
    MissingAnchors(&'static str),
    #[error("permutation is not a bijection over {0} nodes")]
    NotAPermutation(usize),
    #[error("graph cache is malformed: {0}")]
    GraphCache(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
