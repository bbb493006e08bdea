use thiserror::Error;

/// Errors produced by the fitting, selection and I/O routines.
#[derive(Debug, Error)]
pub enum SpamError {
    /// Malformed or inconsistent user input (shapes, flags, values).
    #[error("invalid input: {0}")]
    Input(String),

    /// A covariate value outside the unit interval reached the basis.
    #[error("value {value} at row {row} lies outside [0, 1]")]
    Domain { row: usize, value: f64 },

    /// A numerical failure that upstream guards should have prevented.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A CSV cell that could not be parsed as a number.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A fit along a path failed at a specific penalty level.
    #[error("fit failed at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<SpamError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SpamError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        SpamError::Input(msg.into())
    }

    /// True for errors caused by the caller's input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            SpamError::Numeric(_) => false,
            SpamError::AtLambda { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, SpamError>;
