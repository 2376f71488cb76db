use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("at least {required} samples are required, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("curve is not strictly monotone at sample {index}")]
    NonMonotonic { index: usize },

    #[error("SOC {0} lies outside the curve's SOC range")]
    SocOutOfRange(f64),

    #[error("voltage {0} V lies outside the curve's OCV range")]
    OcvOutOfRange(f64),

    #[error("SOC value {0} is outside [0, 1]")]
    SocNotFraction(f64),

    #[error("OCV value {0} V must be positive")]
    NonPositiveOcv(f64),

    #[error("time stamps must be strictly increasing (sample {index})")]
    NonMonotonicTime { index: usize },

    #[error("capacity must be positive, got {0} Ah")]
    NonPositiveCapacity(f64),

    #[error("actual capacity must be positive, got {0} Ah")]
    NonPositiveActual(f64),

    #[error("invalid estimation problem: {0}")]
    InvalidProblem(&'static str),

    #[error("no feasible point in the search box: every candidate leaves the curve's SOC range")]
    NoFeasiblePoint,

    #[error("OCV samples span {span_v} V, too flat to identify capacity")]
    DegenerateData { span_v: f64 },

    #[error("window [{start}, {end}) selects fewer than 3 samples")]
    WindowTooSmall { start: usize, end: usize },

    #[error("trace has no OCV samples")]
    MissingOcv,

    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),

    #[error(
        "calibrated SOC {soc} left the curve range at t = {time_s} s before reaching the stop SOC"
    )]
    RangeExceeded { soc: f64, time_s: f64 },

    #[error("no points fall inside the curve's SOC range")]
    NoIncludedPoints,

    #[error("empty input")]
    EmptyInput,
}
