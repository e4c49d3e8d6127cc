use thiserror::Error;

pub type Result<T> = std::result::Result<T, TbError>;

#[derive(Debug, Error)]
pub enum TbError {
    #[error("empty support")]
    EmptySupport,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("growth rescaling failed: {0}")]
    Rescale(String),
    #[error("top cube retry budget exhausted after {0} enlargements")]
    RetryExhausted(usize),
    #[error("atom {atom} lies outside the window top cube")]
    OutsideWindow { atom: usize },
    #[error("missing test function on cube (scale {scale}, index {index:?})")]
    MissingTestFunction { scale: i32, index: Vec<i64> },
    #[error("accretive projection failed: {0}")]
    Projection(String),
    #[error("adapted denominator {value:.3e} below delta^2/2 at atom {atom}, scale {scale}")]
    Denominator { atom: usize, scale: i32, value: f64 },
    #[error("function is not measurable with respect to the required partition: {0}")]
    NotMeasurable(String),
    #[error("cubes are not comparable")]
    NotComparable,
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("fixture format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
