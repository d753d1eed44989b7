//! Error types shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Broad classification of an error, used by callers (notably the CLI) to
/// decide how to report failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Problems with input data: unreadable files, malformed rows, values
    /// out of range, missing users.
    Input,
    /// Problems with configuration: invalid thresholds, bad parameter
    /// combinations, unusable analysis ranges.
    Config,
    /// Violated internal invariants; these indicate a bug.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: column {column:?} not found in header")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: no row survived validation for any user")]
    NoValidRows { path: PathBuf },

    #[error("trajectory of user {user:?} has no points")]
    EmptyTrajectory { user: String },

    #[error("{path} row {row}: {what} = {value} is outside [{lo}, {hi}]")]
    ValueOutOfRange {
        path: PathBuf,
        row: u64,
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{path} row {row}: duplicate cell (user {user:?}, source {outcome_source:?}, metric {metric:?})")]
    DuplicateOutcome {
        path: PathBuf,
        row: u64,
        user: String,
        outcome_source: String,
        metric: String,
    },

    #[error("{path} row {row}: unknown metric {metric:?}")]
    UnknownMetric {
        path: PathBuf,
        row: u64,
        metric: String,
    },

    #[error("{path} row {row}: metric {metric:?} is not valid for source {outcome_source:?}")]
    MetricSourceMismatch {
        path: PathBuf,
        row: u64,
        metric: String,
        outcome_source: String,
    },

    #[error("{path} row {row}: duplicate attribute (user {user:?}, attribute {attribute:?})")]
    DuplicateAttribute {
        path: PathBuf,
        row: u64,
        user: String,
        attribute: String,
    },

    #[error("{path} row {row}: empty value for (user {user:?}, attribute {attribute:?})")]
    EmptyAttributeValue {
        path: PathBuf,
        row: u64,
        user: String,
        attribute: String,
    },

    #[error("resample interval must be > 0, got {0}")]
    NonPositiveInterval(f64),

    #[error("invalid grid bounds: require min_lat < max_lat, min_lon < max_lon, cell_size > 0")]
    InvalidGridBounds,

    #[error("heatmap specs differ; operation requires identical grids")]
    SpecMismatch,

    #[error("cannot integrate an empty list of heatmaps")]
    NoHeatmaps,

    #[error("SSIM window {window} exceeds grid extent {rows}x{cols}")]
    WindowTooLarge {
        window: usize,
        rows: usize,
        cols: usize,
    },

    #[error("integrated heatmap has no visited cell")]
    EmptyIntegrated,

    #[error("user {user:?} has no point inside the grid bounding box")]
    NoInBoxPoints { user: String },

    #[error("series of length {len} is too short; need more than {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("tolerance r must be > 0, got {0}")]
    NonPositiveTolerance(f64),

    #[error("grid {rows}x{cols} is too small for window side {min}")]
    GridTooSmall {
        rows: usize,
        cols: usize,
        min: usize,
    },

    #[error("sample entropy is undefined: no window pair matched at scale {scale}")]
    UndefinedEntropy { scale: usize },

    #[error("novelty series of length {len} is too short for entropy estimation; need at least 2")]
    NoveltySeriesTooShort { len: usize },

    #[error("need at least {need} users, got {have}")]
    TooFewUsers { have: usize, need: usize },

    #[error("no qualifying pair has the outcome ({outcome_source}, {column})")]
    NoQualifyingPairs {
        outcome_source: String,
        column: String,
    },

    #[error("user {user:?} is missing feature {feature:?}")]
    MissingFeature { user: String, feature: String },

    #[error("k = {k} is out of range for {users} users")]
    KOutOfRange { k: usize, users: usize },

    #[error("empty k range: k_min {k_min} > k_max {k_max}")]
    EmptyKRange { k_min: usize, k_max: usize },

    #[error("attribute {attribute:?} not present in demographics")]
    MissingAttribute { attribute: String },

    #[error("attribute {attribute:?} has fewer than 2 subgroups with the audited outcome")]
    TooFewSubgroups { attribute: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("audit stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Wrap the error with the pipeline stage it surfaced from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonPositiveInterval(_)
            | Error::InvalidGridBounds
            | Error::WindowTooLarge { .. }
            | Error::NonPositiveTolerance(_)
            | Error::EmptyKRange { .. }
            | Error::KOutOfRange { .. }
            | Error::InvalidConfig(_) => ErrorKind::Config,
            Error::Internal(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Input,
        }
    }
}
