use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid geometry in feature `{feature}`: {reason}")]
    Geometry { feature: String, reason: String },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("point ({lon}, {lat}) lies inside both `{first}` and `{second}` at level {level}")]
    Overlap {
        level: String,
        first: String,
        second: String,
        lon: f64,
        lat: f64,
    },

    #[error("within transform did not converge after {iterations} iterations (max change {max_change:e})")]
    NotConverged { iterations: usize, max_change: f64 },

    #[error("insufficient clusters: need at least 2, found {0}")]
    InsufficientClusters(usize),

    #[error("no estimable columns remain after dropping collinear terms")]
    NoColumns,

    #[error("constant field: values have zero variance")]
    ConstantField,

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing columns: {0}")]
    MissingColumns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("geojson: {0}")]
    GeoJson(String),

    #[error("binary cache: {0}")]
    Cache(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Wrap `self` as a failure of the named pipeline stage.
    pub fn at(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Name of the stage that failed, if known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
