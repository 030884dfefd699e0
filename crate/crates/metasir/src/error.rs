//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge within {max_terms} terms (last term {last_term:e})")]
    SeriesNonConvergence { max_terms: usize, last_term: f64 },

    #[error("quadrature did not reach the requested tolerance (achieved {achieved:e}, requested {requested:e})")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("sampled an empty base-station process (seed {seed}); enlarge the window or density")]
    EmptyProcess { seed: u64 },

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("queue system unstable: {0}")]
    Instability(String),

    #[error("too few qualifying links: {count} (need at least {needed})")]
    TooFewLinks { count: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
