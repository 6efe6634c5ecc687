use std::io;

/// Errors raised anywhere in the codec stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("autodiff graph error: {0}")]
    Graph(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
