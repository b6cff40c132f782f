//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the laboratory's operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (shape mismatch, bad exponent, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The pair (A, P0) fails the Kalman rank condition for every K <= N-1.
    #[error("system is not controllable: {0}")]
    NotControllable(String),

    /// Numeric rank decision falls inside the ambiguity band around the
    /// singular-value cutoff; the decomposition refuses to guess.
    #[error("ambiguous numeric rank: singular value ratio {ratio:.3e} lies in the refusal band [{lo:.0e}, {hi:.0e}]")]
    AmbiguousRank { ratio: f64, lo: f64, hi: f64 },

    /// Two supposedly equal evaluation routes disagree beyond tolerance.
    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    /// Controllability Gramian too ill-conditioned to invert reliably.
    #[error("ill-conditioned steering horizon: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    IllConditionedHorizon { cond: f64, limit: f64 },

    /// Dual Newton and the primal fallback both failed to converge.
    #[error("minimum-energy solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        residual: f64,
        iterations: usize,
        /// Best multiplier iterate found, for diagnosis.
        best_multiplier: Vec<f64>,
    },

    /// The perturbation operator is too large: reduce h*t.
    #[error("h too large: ||H R|| = {norm:.3e} > 1/2; reduce h*t below the admissible threshold")]
    HTooLarge { norm: f64 },

    /// Curved-family construction failed (midpoint mismatch, singular map).
    #[error("curved construction failed: {0}")]
    Construction(String),

    /// Grid specification violates the scheme's step restriction or shape rules.
    #[error("grid specification error: {0}")]
    GridSpec(String),

    /// A cylinder contains too few grid nodes to measure an oscillation.
    #[error("cylinder too coarse: contains {found} sample nodes, need at least {need}")]
    TooCoarse { found: usize, need: usize },

    /// Rescaling target leaves the source domain.
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    /// Unknown preset name.
    #[error("unknown preset: {0}")]
    UnknownPreset(String),

    /// Configuration rejected at load time.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
