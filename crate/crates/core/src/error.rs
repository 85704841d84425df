use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("input has no data rows: {0}")]
    EmptyInput(String),

    #[error("required column `{column}` is missing from the header")]
    MissingColumn { column: String },

    #[error("every observation was excluded by the filters ({rejected} rejected)")]
    AllExcluded { rejected: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),

    #[error("group of {n} observations is too small (need at least {needed})")]
    GroupTooSmall { n: usize, needed: usize },

    #[error("input contains a non-finite value at feature {feature}")]
    NonFinite { feature: usize },

    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forest has no trees")]
    EmptyForest,

    #[error("no observation is out-of-bag for any tree; fit more trees")]
    NoOutOfBag,

    #[error("out-of-bag mode requires the training rows the forest was fitted on")]
    NotTrainingData,

    #[error("hyperparameter grid is empty")]
    EmptyGrid,

    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },

    #[error("points contain fewer than {k} distinct locations; cannot fill {k} non-empty clusters")]
    DegenerateClusters { k: usize },

    #[error("no validity index cast a vote")]
    NoVotes,

    #[error("sample is empty")]
    EmptySample,

    #[error("exact test requested but samples contain ties")]
    ExactWithTies,

    #[error("exact test supports at most {max} observations, got {n}")]
    ExactTooLarge { n: usize, max: usize },

    #[error("need at least two non-empty size groups, found {0}")]
    TooFewSizeGroups(usize),

    #[error("cluster labels do not match the contribution matrix: {0}")]
    LabelMismatch(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
