use thiserror::Error;

/// Errors raised by the model, the optimizer and the command-line layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} us is not an integer number of microseconds")]
    NonIntegerSlot { what: &'static str, value: f64 },
    #[error("value {value} is outside the allowed range for {what}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("improvement factor undefined: no-imperfection probability of {what} is 1")]
    DegenerateLog { what: &'static str },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("series diverges: geometric ratio {ratio} is not below 1")]
    DivergentSeries { ratio: f64 },
    #[error("empty cut-off domain: lower bound {lower} us is not below upper bound {upper} us")]
    EmptyCutoffDomain { lower: i64, upper: i64 },
    #[error("no cut-off time reaches the target fidelity {target}")]
    Infeasible { target: f64 },
    #[error("configuration error in '{field}': {msg}")]
    Config { field: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
