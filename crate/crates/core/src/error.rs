use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or experiment setting is inconsistent (bad mask, empty range, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite or otherwise malformed numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// An argument lies outside the operation's domain (negative time, M out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The grid cannot resolve what was asked of it.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Restricted eigenvectors are numerically dependent on the mask.
    #[error("degeneracy error: {0}")]
    Degeneracy(String),

    /// A hypothesis of the construction does not hold for the given data.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    /// The closed-loop state left the representable range.
    #[error("simulation diverged at t = {time}: {detail}")]
    Divergence { time: f64, detail: String },

    /// A sub-solve of the feedback synthesis failed.
    #[error("synthesis failed for j = {index}: {source}")]
    Synthesis {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}
