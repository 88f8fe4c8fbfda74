use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probability at index {index} is {value}; must lie strictly inside (0, 1)")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("health score at index {index} is {value}; must lie strictly inside (0, 1)")]
    ScoreOutOfRange { index: usize, value: f64 },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("{what}: n = {n} exceeds the limit of {limit}")]
    CostGuard {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("no outcomes recorded yet")]
    NoData,

    #[error("all {n} scheduled treatments have already been recorded")]
    QueueExhausted { n: usize },

    #[error("time {time} lies outside the horizon [0, {horizon}]")]
    OutOfHorizon { time: f64, horizon: f64 },

    #[error("arrival at {time} precedes the previous arrival at {previous}")]
    OutOfOrder { time: f64, previous: f64 },

    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
