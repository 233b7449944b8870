use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("modelwire: i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("modelwire: protocol error: {0}")]
    Protocol(String),

    #[error("modelwire: remote error: {0}")]
    Remote(String),

    #[error("modelwire: no response within {0:?}")]
    Timeout(std::time::Duration),

    #[error("modelwire: protocol version mismatch: client {client}, server {server}")]
    Version { client: u32, server: u32 },

    #[error("modelwire: malformed model spec: {0}")]
    Spec(String),

    #[error("modelwire: channel closed")]
    Closed,
}

pub type WireResult<T> = Result<T, WireError>;

impl From<WireError> for gmfim_core::Error {
    fn from(e: WireError) -> Self {
        gmfim_core::Error::Model(e.to_string())
    }
}
