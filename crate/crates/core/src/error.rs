use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema violation{}: {message}", layer_suffix(*.layer))]
    Schema {
        layer: Option<usize>,
        message: String,
    },

    #[error("dimension mismatch at layer {layer}: {message}")]
    DimensionMismatch { layer: usize, message: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite value at layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("too many uncertain neurons for enumeration: {found} > {limit}")]
    Capacity { found: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(k) => format!(" at layer {k}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
