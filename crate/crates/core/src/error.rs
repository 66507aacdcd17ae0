use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A state, derivative or Jacobian entry became non-finite (or left the
    /// configured divergence bound).
    #[error("divergence at t = {t}: non-finite or unbounded state {state:?}")]
    Divergence { t: f64, state: Vec<f64> },

    #[error("adaptive step underflow at t = {t} (dt = {dt:e}); the system is too stiff for an explicit method, reduce dt")]
    Stiffness { t: f64, dt: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("degenerate tangent frame: column {column} has residual norm {norm:e}")]
    DegenerateFrame { column: usize, norm: f64 },

    #[error("Kaplan-Yorke dimension is unbounded: every partial sum of the spectrum is non-negative")]
    UnboundedDimension,

    #[error("covariance error: {0}")]
    Covariance(String),

    #[error("observation function failed on every sigma point")]
    Observation,

    #[error("regime lost: {0} consecutive iterations produced only penalty observations")]
    RegimeLost(usize),

    #[error("unknown model '{name}'; available models: {}", available.join(", "))]
    UnknownModel {
        name: String,
        available: Vec<String>,
    },

    #[error("parameter '{0}' has no value; it must be assigned explicitly")]
    MissingParameter(String),

    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
}

impl Error {
    pub(crate) fn divergence(t: f64, state: &[f64]) -> Self {
        Error::Divergence {
            t,
            state: state.to_vec(),
        }
    }

    pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                got,
                expected,
            })
        }
    }
}
