use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid potential spec: {0}")]
    InvalidSpec(String),
    #[error("evaluation at singularity (distance {distance:e} below exclusion radius)")]
    EvaluationAtSingularity { distance: f64 },
    #[error("expansion radius {radius} is inside the sources (max |p| = {max_center})")]
    RadiusInsideSources { radius: f64, max_center: f64 },
    #[error("quadrature failed to reach tolerance (estimate {estimate:e})")]
    QuadratureFailure { estimate: f64 },
    #[error("potential is nonpositive ({value})")]
    NonpositivePotential { value: f64 },
    #[error("triple is not symplectic (min eigenvalue of q = {min_eig:e})")]
    NotSymplectic { min_eig: f64 },
    #[error("singular coefficient in the AH system")]
    SingularCoefficient,
    #[error("integration blew up at tau = {tau}")]
    IntegrationBlowup { tau: f64 },
    #[error("tau = {0} outside the sampled profile")]
    OutOfRange(f64),
    #[error("spinor pair lies on the diagonal locus (z ^ w = 0)")]
    OnDiagonal,
    #[error("spinor pair lies on the anti-diagonal locus (<w,z> = 0)")]
    OnAntidiagonal,
    #[error("degenerate minor axis")]
    DegenerateMinorAxis,
    #[error("point is outside the domain of the {0} chart")]
    ChartDomainViolation(&'static str),
    #[error("bad cutoff scale: {0}")]
    BadDelta(String),
    #[error("point is inside the hole of the model potential")]
    InsideHole,
    #[error("solver diverged (residual {residual})")]
    SolverDivergence { residual: f64 },
    #[error("contraction failed at step {step} (ratio {ratio})")]
    ContractionFailure { step: usize, ratio: f64 },
    #[error("direct quadrature refused for grid of {0} points per axis")]
    QuadratureOverflow(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
