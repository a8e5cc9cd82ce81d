use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed patch container: {0}")]
    MalformedContainer(String),
    #[error("texture/opacity payload mismatch: {0}")]
    PayloadMismatch(String),
    #[error("image codec: {0}")]
    Image(String),
    #[error("parse error: {0}")]
    Parse(String),

    #[error("quad `{0}` is degenerate: {1}")]
    DegenerateQuad(String, String),
    #[error("scene has no target quad")]
    MissingTarget,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown quad id `{0}`")]
    UnknownQuad(String),
    #[error("invalid patch placement: {0}")]
    InvalidPlacement(String),
    #[error("grid position {0} is not a free cell")]
    Blocked(String),

    #[error("no candidate viewpoint sees the target above the confidence threshold")]
    NoVisibleViewpoint,
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("loss weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("unknown target label `{0}`")]
    UnknownLabel(String),
    #[error("template `{label}` ({th}x{tw}) does not fit a {ih}x{iw} image")]
    TemplateTooLarge {
        label: String,
        th: usize,
        tw: usize,
        ih: usize,
        iw: usize,
    },

    #[error("empty viewpoint set")]
    EmptyViews,
    #[error("empty episode set")]
    EmptyEpisodes,
    #[error("invalid optimizer configuration: {0}")]
    OptimizeConfig(String),
    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing pipeline input: {0}")]
    MissingInput(String),
}

impl Error {
    /// Whether the error stems from invalid configuration rather than a
    /// failed pipeline precondition.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::OptimizeConfig(_) | Error::StageOrder(_) | Error::WeightSum(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
