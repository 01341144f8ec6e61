use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("evaluation at s = {s} is within {distance:e} of the pole at {pole}")]
    PoleProximity { s: f64, pole: f64, distance: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change in root bracket ({lo}, {hi}) for root #{index}")]
    RootCount { index: usize, lo: f64, hi: f64 },

    #[error("root bracket around {at} collapsed below working precision")]
    RootPrecision { at: f64 },

    #[error("mixture coefficient {side} #{index} = {value} is not positive")]
    Positivity { side: &'static str, index: usize, value: f64 },

    #[error("mass threshold {threshold} not reached with {count} roots per side (mass {mass})")]
    TruncationCap { threshold: f64, count: usize, mass: f64 },

    #[error("s = {s} lies outside the strip ({lo}, {hi}) where the mixture transform is finite")]
    StripViolation { s: f64, lo: f64, hi: f64 },

    #[error("rates {a} and {b} coincide to within the separation threshold")]
    CoincidentRates { a: f64, b: f64 },

    #[error("step {step}: cancellation ratio {ratio:e} exceeds the budget for {bits}-bit arithmetic")]
    PrecisionExhausted { step: usize, ratio: f64, bits: u32 },

    #[error("step {step}: boundary equation has no sign change on (0, {upper})")]
    BracketFailure { step: usize, upper: f64 },

    #[error("kernel tail mass {mass:e} beyond the grid exceeds {limit:e}")]
    TailMass { mass: f64, limit: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Machine-readable category used for exit codes and error prefixes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) | Error::Config(_) => "config",
            Error::PoleProximity { .. } | Error::Domain(_) | Error::StripViolation { .. } => "domain",
            Error::RootCount { .. } | Error::RootPrecision { .. } | Error::Positivity { .. } => "spectral",
            Error::TruncationCap { .. } => "spectral",
            Error::CoincidentRates { .. } | Error::PrecisionExhausted { .. } | Error::BracketFailure { .. } => {
                "recursion"
            }
            Error::TailMass { .. } => "oracle",
            Error::AtStep { source, .. } => source.category(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep { step, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
