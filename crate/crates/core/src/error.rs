use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("image `{image}`: {detail}")]
    ShapeMismatch { image: String, detail: String },

    #[error("image `{image}`: label {value} at (row {row}, col {col}) is outside [0, {num_classes})")]
    LabelOutOfRange {
        image: String,
        row: usize,
        col: usize,
        value: u16,
        num_classes: usize,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image `{image}` holds common-class samples but has no scene name")]
    MissingSceneName { image: String },

    #[error("k-means asked for {k} clusters but only {distinct} distinct points exist")]
    TooFewDistinctPoints { k: usize, distinct: usize },

    #[error("common class {class} has no usable samples for clustering")]
    NoUsableSamples { class: usize },

    #[error("invalid label hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("sample {index}: class label {class} is not the parent of subclass {subclass}")]
    InconsistentLabels {
        index: usize,
        subclass: usize,
        class: usize,
    },

    #[error("layer {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite loss or gradient at iteration {iteration}{}", stage.as_ref().map(|s| format!(" of stage `{s}`")).unwrap_or_default())]
    NumericalAbort {
        stage: Option<String>,
        iteration: u64,
    },

    #[error("model has never been trained")]
    UntrainedModel,

    #[error("class catalog mismatch: expected {expected} classes, found {found}")]
    CatalogMismatch { expected: usize, found: usize },

    #[error("no labeled pixels were counted")]
    NoCountedPixels,

    #[error("{path}:{line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the optimizer diverging rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalAbort { .. })
    }
}
