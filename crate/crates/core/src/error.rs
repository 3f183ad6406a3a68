use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A problem definition whose pieces do not fit together.
    #[error("configuration error in `{block}`: {reason}")]
    Config { block: &'static str, reason: String },

    /// The plant model produced a non-finite state.
    #[error("non-finite state from plant model at {state:?} with input {input:?}")]
    NonFinite { state: Vec<f64>, input: Vec<f64> },

    /// A particle likelihood evaluated to NaN.
    #[error("NaN likelihood for particle {index}")]
    NanLikelihood { index: usize },

    /// Input outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A forward-pass failure at horizon offset `offset`.
    #[error("filter failed at horizon offset {offset}: {source}")]
    Horizon {
        offset: usize,
        #[source]
        source: Box<Error>,
    },

    /// A closed-loop failure at control step `step`.
    #[error("control step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(block: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            block,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_offset(self, offset: usize) -> Self {
        Error::Horizon {
            offset,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}
