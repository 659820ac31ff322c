use thiserror::Error;

/// Errors for design construction, validation, estimation, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A design or parameter field violates a structural invariant.
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },

    /// A star design was requested with a horizon that fails the
    /// divisibility requirement.
    #[error("divisibility violation for {kind}: {message}")]
    Divisibility { kind: &'static str, message: String },

    /// No feasible design exists for the requested horizon and order.
    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    /// The closed-form objective or block variance machinery was applied
    /// outside its proven class of designs.
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    /// Enumeration was requested on an instance too large to enumerate.
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    /// Inputs that must agree (horizons, estimand ids, lengths) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid { field, message: message.into() }
    }

    /// Stable machine-readable code, used by the CLI's JSON error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::Divisibility { .. } => "divisibility",
            Error::HorizonTooShort(_) => "horizon_too_short",
            Error::InfeasibleDesign(_) => "infeasible_design",
            Error::InstanceTooLarge(_) => "instance_too_large",
            Error::Mismatch(_) => "mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
