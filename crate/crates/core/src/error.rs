use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("covariance is not symmetric positive definite: {0}")]
    InvalidCovariance(String),

    #[error("ill-conditioned covariance (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("annotation contains no points")]
    EmptyAnnotation,

    #[error("point ({x:.2}, {y:.2}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },

    #[error("marker of instance {instance} is enclosed by barrier pixels")]
    IsolatedMarker { instance: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("view sets are not aligned: {base} base vs {augmented} augmented instances")]
    Alignment { base: usize, augmented: usize },

    #[error("scene cache does not match the scene: {0}")]
    StaleCache(String),

    #[error("non-finite loss at iteration {iteration}: {diagnosis}")]
    NonFinite { iteration: usize, diagnosis: String },

    #[error("could not place object {placed} of {requested} after {attempts} attempts; lower the density")]
    Packing { placed: usize, requested: usize, attempts: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
