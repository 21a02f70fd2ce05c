use thiserror::Error;

use crate::looprun::LoopRecord;

/// Errors raised across the toolkit.
///
/// Every variant maps to a stable machine-readable code via [`Error::code`],
/// which the command-line front end reports verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transfer function: {0}")]
    InvalidTf(String),

    #[error("denominator vanishes at omega = {omega} rad/s")]
    EvaluationAtPole { omega: f64 },

    #[error("polynomial degree {degree} exceeds the bound of {bound}")]
    DegreeOverflow { degree: usize, bound: usize },

    #[error("plant is not stable: pole at {re} + {im}j")]
    UnstablePlant { re: f64, im: f64 },

    #[error("zero on the imaginary axis at {re} + {im}j cannot be reflected")]
    ZeroOnImaginaryAxis { re: f64, im: f64 },

    #[error("Q = W/P_mp is improper: relative degree of W ({weight}) is below that of P_mp ({plant})")]
    ImproperQ { weight: i32, plant: i32 },

    #[error("closed loop has a pole at {re} + {im}j")]
    UnstableClosedLoop { re: f64, im: f64 },

    #[error("|L| does not cross unity on [{lo}, {hi}] rad/s")]
    NoCrossover { lo: f64, hi: f64 },

    #[error("discretized pole at |z| = {radius} lies outside the unit circle")]
    UnstableDiscretization { radius: f64 },

    #[error("numerical divergence at t = {t} s: {reason}")]
    NumericalDivergence {
        t: f64,
        reason: String,
        partial: Option<Box<LoopRecord>>,
    },

    #[error("small-angle estimate invalid: gamma*b*window = {angle} > 0.3")]
    WindowTooLong { angle: f64 },

    #[error("record grids differ: {0}")]
    GridMismatch(String),

    #[error("linear-regime guard tripped at {frequency_hz} Hz: |Fz|/|F| = {ratio}")]
    NonlinearRegime { frequency_hz: f64, ratio: f64 },

    #[error("normal equations ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidTf(_) => "invalid-tf",
            Error::EvaluationAtPole { .. } => "evaluation-at-pole",
            Error::DegreeOverflow { .. } => "degree-overflow",
            Error::UnstablePlant { .. } => "unstable-plant",
            Error::ZeroOnImaginaryAxis { .. } => "zero-on-imaginary-axis",
            Error::ImproperQ { .. } => "improper-q",
            Error::UnstableClosedLoop { .. } => "unstable-closed-loop",
            Error::NoCrossover { .. } => "no-crossover",
            Error::UnstableDiscretization { .. } => "unstable-discretization",
            Error::NumericalDivergence { .. } => "numerical-divergence",
            Error::WindowTooLong { .. } => "window-too-long",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::NonlinearRegime { .. } => "nonlinear-regime",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Io(_) => "io",
            Error::Serialization(_) => "serialization",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
