use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: quaternion has zero norm")]
    InvalidRotation,
    #[error("non-finite {attribute} at gaussian {index}")]
    NonFiniteParameter { index: usize, attribute: &'static str },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    ImageSize(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },
    #[error("missing forward state: {0}")]
    MissingForwardState(&'static str),
    #[error("stale KNN graph: built for {graph} gaussians but the cloud has {cloud}; rebuild required")]
    StaleGraph { graph: usize, cloud: usize },
    #[error("empty gaussian cloud")]
    EmptyCloud,
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("config: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("frame {frame}: {reason}")]
    Frame { frame: usize, reason: String },
    #[error("format: {0}")]
    Format(String),
    #[error("synthetic scene: {0}")]
    Synthetic(String),
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("non-finite loss at iteration {iter}: {term}")]
    NonFiniteLoss { iter: u64, term: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownKey(_) => ErrorKind::Usage,
            Error::InvalidRotation
            | Error::NonFiniteParameter { .. }
            | Error::NonFiniteActivation { .. }
            | Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
