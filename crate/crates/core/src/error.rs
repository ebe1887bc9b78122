use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("versor is not normalized: pga norm {norm}, expected ±1")]
    NonUnitVersor { norm: f64 },

    #[error("versor mixes even ({even}) and odd ({odd}) parts")]
    MixedParityVersor { even: f64, odd: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contraction `{spec}`: {reason}")]
    Contract { spec: String, reason: String },

    #[error("attention row {row} has no allowed position")]
    FullyMaskedRow { row: usize },

    #[error("channel mismatch: layer expects {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation diverged: body {body} has non-finite state at substep {substep}")]
    SimulationDiverged { body: usize, substep: u64 },

    #[error(
        "could not place {objects} bodies without overlap after {attempts} attempts; \
         use fewer or smaller bodies"
    )]
    Placement { objects: usize, attempts: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("non-finite loss at step {step} (lr {lr}, grad norm {grad_norm})")]
    NonFiniteLoss { step: u64, lr: f64, grad_norm: f64 },

    #[error("horizon {requested} exceeds the {available} available frames")]
    Horizon { requested: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SimulationDiverged { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
