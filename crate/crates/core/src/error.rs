use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance eigenvalue {value:e} is below the clip threshold {threshold:e}")]
    EigenvalueTooNegative { value: f64, threshold: f64 },

    #[error("time {t} lies outside the pulse interval [0, {tau_p}]")]
    OutOfRange { t: f64, tau_p: f64 },

    #[error("pulse catalog failed validation: {}", .0.join("; "))]
    CatalogInvalid(Vec<String>),

    #[error("time grid does not contain the switching instant {instant}")]
    GridMismatch { instant: f64 },

    #[error("matrix is not unitary (max deviation {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("no state trajectory was recorded")]
    MissingTrajectory,

    #[error("adaptive quadrature did not converge (estimate {estimate:e}, error {error:e})")]
    QuadratureNotConverged { estimate: f64, error: f64 },

    #[error("pulse is not first order (S = {s:e}, C = {c:e})")]
    NotFirstOrder { s: f64, c: f64 },

    #[error("no feasible pulse found within the search budget")]
    NoFeasiblePoint,

    #[error("only {usable} usable points in the fit window, need at least 3")]
    InsufficientPoints { usable: usize },

    #[error("unknown pulse '{0}'")]
    UnknownPulse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid decimal '{0}'")]
    BadDecimal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::UnknownPulse(_)
                | Error::InvalidConfig(_)
                | Error::BadDecimal(_)
                | Error::CatalogInvalid(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
