use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {layer}: {message} (expected {expected}, got {actual})")]
    LayerShape {
        layer: usize,
        message: &'static str,
        expected: String,
        actual: String,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("weights truncated at byte {offset} while reading layer {layer} ({field})")]
    WeightsTruncated {
        offset: usize,
        layer: usize,
        field: &'static str,
    },

    #[error("weights file has {0} trailing bytes")]
    WeightsTrailing(usize),

    #[error("unsupported weights version {major}.{minor}.{revision}")]
    WeightsVersion { major: i32, minor: i32, revision: i32 },

    #[error("parameters do not match network: {0}")]
    ParamMismatch(String),

    #[error("image: {0}")]
    Image(String),

    #[error("annotations line {line}: {message}")]
    Annotations { line: usize, message: String },

    #[error("detections: {0}")]
    Detections(String),
}

impl Error {
    pub(crate) fn layer_shape(layer: usize, message: &'static str, expected: impl ToString, actual: Shape) -> Self {
        Error::LayerShape {
            layer,
            message,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
