use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    CoordinateRange { lat: f64, lon: f64 },

    #[error("geohash precision {0} outside 1..=12")]
    Precision(usize),

    #[error("invalid geohash character {ch:?} at position {position}")]
    GeohashChar { ch: char, position: usize },

    #[error("empty geohash")]
    EmptyGeohash,

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("training requires both classes; missing class {missing}")]
    SingleClass { missing: &'static str },

    #[error("schema mismatch; offending columns: {}", offending.join(", "))]
    Schema { offending: Vec<String> },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),
}
