use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no free boundary found in (0, {x_max}]")]
    NoBoundary { x_max: f64 },

    #[error("evaluation out of range at x = {x} (rate {rate})")]
    OutOfRange { x: f64, rate: f64 },

    #[error("construction check `{check}` failed: {detail}")]
    Construction { check: &'static str, detail: String },

    #[error("subsidiary {subsidiary} in state {state}: {source}")]
    AtState {
        subsidiary: usize,
        state: String,
        #[source]
        source: Box<Error>,
    },

    #[error("explicit oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
