use thiserror::Error;

/// Which ratio denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    /// Control-arm late-stage incidence (the `S` ratio).
    ControlLate,
    /// Control-arm cancer death rate (the `M` ratio).
    ControlDeath,
}

impl std::fmt::Display for Denominator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Denominator::ControlLate => write!(f, "control-arm late-stage incidence"),
            Denominator::ControlDeath => write!(f, "control-arm cancer death rate"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Parameterization(String),

    #[error("degenerate denominator: {0} is zero")]
    DegenerateDenominator(Denominator),

    #[error("simulation failed: {attempts} consecutive degenerate draws (parameters incompatible with sample size)")]
    SimulationFailure { attempts: u32 },

    #[error("non-identifiable: {0}")]
    NonIdentifiable(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
}

pub type Result<T> = std::result::Result<T, Error>;
