use thiserror::Error;

/// Failure modes shared by every module of the laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid backend: {0}")]
    InvalidBackend(String),
    #[error("degenerate metric: coefficient {value:e} at node {node}")]
    DegenerateMetric { node: usize, value: f64 },
    #[error("form degree {degree} unsupported on a {dimension}-manifold")]
    UnsupportedDegree { degree: usize, dimension: usize },
    #[error("flow left the backend ansatz: off-ansatz component {magnitude:e}")]
    AnsatzBreak { magnitude: f64 },
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("form of degree {degree} is not closed: |dH| = {residual:e}")]
    NotClosed { degree: usize, residual: f64 },
    #[error("metric fell below the SPD floor at t = {t}, node {node} (value {value:e})")]
    MetricDegenerate { t: f64, node: usize, value: f64 },
    #[error("stiffness abort at t = {t}: {reason}")]
    StiffnessAbort { t: f64, reason: String },
    #[error("time {t} outside [{start}, {end}]")]
    RangeError { t: f64, start: f64, end: f64 },
    #[error("maximum principle violated at t = {t}: min = {min:e}")]
    MaxPrincipleViolation { t: f64, min: f64 },
    #[error("conjugate solution lost positivity at t = {t}, node {node}")]
    PositivityLoss { t: f64, node: usize },
    #[error("mass drift {drift:e} exceeds tolerance {tol:e}")]
    MassDrift { drift: f64, tol: f64 },
    #[error("conjugate dilaton requires a positive density")]
    PositivityRequired,
    #[error("operation is only defined for Ricci flow (H = 0)")]
    RicciFlowOnly,
    #[error("measure has mass {mass}, expected 1")]
    NormalizationError { mass: f64 },
    #[error("eigen-iteration failed to converge: residual {residual:e} after {iterations} iterations")]
    EigenFail { residual: f64, iterations: usize },
    #[error("region too small: {0}")]
    TooSmall(String),
    #[error("function vanishes identically")]
    ZeroFunction,
    #[error("fixture invariant violated: {0}")]
    FixtureBroken(String),
    #[error("dilaton flow diverged: {0}")]
    NoConvergence(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
