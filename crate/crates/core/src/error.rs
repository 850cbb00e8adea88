use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpticsError {
    #[error("sag undefined at ({x:.6}, {y:.6}) mm: conic root argument {arg:.3e} < 0")]
    Domain { x: f64, y: f64, arg: f64 },
    #[error("ray does not intersect surface `{0}`")]
    NoIntersection(String),
    #[error("wavelength {0} um is outside the fitted band [0.4, 0.7] um")]
    OutOfBand(f64),
    #[error("material `{0}` has no single index; evaluate it at a point")]
    NotHomogeneous(String),
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("GRIN integration exceeded {0} steps")]
    StepLimitExceeded(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid prescription: {0}")]
    InvalidPrescription(String),
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("no feasible design: {0}")]
    InfeasibleConstraints(String),
    #[error("need at least {need} rays, got {got}")]
    InsufficientRays { got: usize, need: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, OpticsError>;
