use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("record `{id}` has non-positive input `{column}` = {value}")]
    NonPositiveInput {
        id: String,
        column: String,
        value: f64,
    },

    #[error("record `{id}` has an invalid output: {reason}")]
    InvalidOutput { id: String, reason: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("input/output split unknown: pass the input count or add a `#inputs=<m>` line")]
    MissingSplit,

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("too few records: need at least {needed}, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("cluster proportions must be positive and sum to 1 (sum = {0})")]
    BadProportions(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("efficiency score {0} outside [0, 1]")]
    ThetaOutOfRange(f64),

    #[error("k = {k} outside [1, {max}]")]
    KOutOfRange { k: usize, max: usize },

    #[error("polynomial expansion has {terms} terms, limit is {limit}")]
    TooManyTerms { terms: usize, limit: usize },

    #[error("normal equations are singular (ridge b = 0 with rank-deficient design)")]
    SingularSystem,

    #[error("fold {0} leaves an empty training set")]
    EmptyTrainingFold(usize),

    #[error("cluster {0} has no records")]
    EmptyCluster(usize),

    #[error("cluster {cluster} has {records} records, too few to cross-validate")]
    ClusterTooSmall { cluster: usize, records: usize },

    #[error("LP for DMU `{dmu}` ended with status {status}")]
    Solver { dmu: String, status: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
