use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: label `{label}` is not one of +1, 1, -1")]
    Label { line: usize, label: String },

    #[error("line {line}: non-finite feature value `{value}`")]
    Value { line: usize, value: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("PRBEP loss is undefined for a tuple with fp={fp} != fn={fn_}")]
    UndefinedSlice { fp: usize, fn_: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular dictionary system; raise the multiplier floor (alpha) above {alpha_floor:e}")]
    Singular { alpha_floor: f64 },

    #[error("brute-force search refused for n={n} (limit {limit}); use the oracle search")]
    TooLarge { n: usize, limit: usize },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("model schema version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("malformed model: {0}")]
    Model(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
