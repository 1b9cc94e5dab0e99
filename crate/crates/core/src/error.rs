use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("gimbal lock: theta = {theta} too close to +-pi/2")]
    GimbalLock { theta: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("numerical divergence: state magnitude exceeded 1e9")]
    NumericalDivergence,
    #[error("step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
    #[error("RLS breakdown: lambda + phi'P phi = {0} is not positive")]
    NumericalBreakdown(f64),
    #[error("insufficient excitation in {0} regressor")]
    InsufficientExcitation(&'static str),
    #[error("rank-deficient inputs: {0}")]
    RankDeficientInputs(String),
    #[error("order {order} exceeds numeric rank {rank} of the projection")]
    OrderTooLarge { order: usize, rank: usize },
    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },
    #[error("degenerate reference: channel {0} is constant")]
    DegenerateReference(usize),
    #[error("Riccati iteration did not converge")]
    NoConvergence,
    #[error("Riccati iteration diverged: pair not stabilizable")]
    NotStabilizable,
    #[error("I - (A - B Kf)' is singular")]
    SingularClosedLoop,
    #[error("invalid thrust U1 = {0}")]
    InvalidThrust(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn at(self, step: usize) -> Error {
        match self {
            Error::AtStep { .. } => self,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
