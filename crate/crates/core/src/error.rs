use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    /// A distribution or configuration parameter is invalid.
    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: String, detail: String },

    /// The quantity is undefined for a degenerate input (e.g. the mean rate of a
    /// zero-time server).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The feasible rate region or the stability window is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A numerical convolution would exceed the configured term budget.
    #[error("convolution budget exceeded: {terms} terms requested, budget is {budget}")]
    BudgetExceeded { terms: u32, budget: u32 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            detail: detail.into(),
        }
    }
}
