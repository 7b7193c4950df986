use std::io;

use thiserror::Error;

/// Errors raised across the engine, planner and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("missing layer `{0}`")]
    MissingLayer(String),

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub fn parse(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub fn at_offset(offset: usize, detail: impl Into<String>) -> Self {
        Error::parse(format!("byte offset {offset}"), detail)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
