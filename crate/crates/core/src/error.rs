use thiserror::Error;

pub type Result<T> = std::result::Result<T, CcfError>;

#[derive(Debug, Error)]
pub enum CcfError {
    /// Non-finite or otherwise unusable input values.
    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("index {index} out of range [{lo}, {hi}]")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error("unknown column `{0}`")]
    MissingColumn(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Model and data disagree (column names, dimensions, format version).
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("component {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<CcfError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CcfError {
    pub(crate) fn at_stage(self, stage: usize) -> Self {
        CcfError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &CcfError {
        match self {
            CcfError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
