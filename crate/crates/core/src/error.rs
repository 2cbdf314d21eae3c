use thiserror::Error;

/// Failure modes shared by every analysis in the crate.
///
/// [`Error::code`] returns a stable kebab-case identifier that the CLI and
/// the JSON reports use.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("load factor undefined: blocked-arrival orbit rate or service departure probability is zero")]
    UndefinedRho,
    #[error("only K = 0 extra waiting places is supported, got K = {0}")]
    UnsupportedK(usize),
    #[error("model is not ergodic: {0}")]
    NotErgodic(String),
    #[error("singular block at level {level}")]
    SingularBlock { level: usize },
    #[error("balance matrix at level 0 has no usable left null vector")]
    NoNullVector,
    #[error("truncation level exceeded {j_max} without convergence")]
    TruncationLimit { j_max: usize },
    #[error("|z| = {modulus} is at or beyond the dominant singularity {z_r}")]
    DivergenceRisk { modulus: f64, z_r: f64 },
    #[error("variant {0} is not built by this operation")]
    UnsupportedVariant(&'static str),
    #[error("quantity undefined: {0}")]
    Undefined(&'static str),
    #[error("k C - B is singular at k = {0}")]
    SingularShift(usize),
    #[error("retrials are not persistent (blocked abandon probability is positive)")]
    NotPersistent,
    #[error("no orbit inflow from a blocked primary area")]
    NoOrbitInflow,
    #[error("not an Okubo-type system: {0}")]
    NotOkubo(&'static str),
    #[error("pure orbit model (p = 0) cannot be standardized")]
    PureOrbit,
    #[error("dimension {got} not supported, need at least {min}")]
    Dimension { got: usize, min: usize },
    #[error("closed form not applicable: {0}")]
    NotApplicable(&'static str),
    #[error("hypergeometric series diverges at |x| = {0}")]
    SeriesDivergence(f64),
    #[error("fit window holds {got} levels, need at least {min}")]
    WindowTooSmall { got: usize, min: usize },
    #[error("level mass underflows inside the fit window at level {0}")]
    TailUnderflow(usize),
    #[error("orbit cap hit for {fraction} of simulated time")]
    CapExceeded { fraction: f64 },
    #[error("retrial rate nu must be positive for generating-function systems")]
    ZeroRetrialRate,
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "invalid-params",
            Error::UndefinedRho => "undefined-rho",
            Error::UnsupportedK(_) => "unsupported-K",
            Error::NotErgodic(_) => "not-ergodic",
            Error::SingularBlock { .. } => "singular-block",
            Error::NoNullVector => "no-null-vector",
            Error::TruncationLimit { .. } => "truncation-limit",
            Error::DivergenceRisk { .. } => "divergence-risk",
            Error::UnsupportedVariant(_) => "unsupported-variant",
            Error::Undefined(_) => "undefined",
            Error::SingularShift(_) => "singular-shift",
            Error::NotPersistent => "not-persistent",
            Error::NoOrbitInflow => "no-orbit-inflow",
            Error::NotOkubo(_) => "not-okubo",
            Error::PureOrbit => "pure-orbit",
            Error::Dimension { .. } => "dimension",
            Error::NotApplicable(_) => "not-applicable",
            Error::SeriesDivergence(_) => "series-divergence",
            Error::WindowTooSmall { .. } => "window-too-small",
            Error::TailUnderflow(_) => "tail-underflow",
            Error::CapExceeded { .. } => "cap-exceeded",
            Error::ZeroRetrialRate => "zero-retrial-rate",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
