use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{layer}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Shape {
        layer: String,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn check_dim(layer: &str, axis: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NumericsError::Shape {
            layer: layer.to_string(),
            axis,
            expected,
            got,
        })
    }
}
