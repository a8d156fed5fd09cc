use thiserror::Error;

/// Errors raised anywhere in the discretisation, solver or driver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distortion inverted cell {cell} (jacobian {det:.3e})")]
    DistortionInvertsCell { cell: usize, det: f64 },

    #[error("mesh distortion requires a mesh without hanging vertices")]
    DistortionOfHangingMesh,

    #[error("cell {0} is not an active cell")]
    InactiveCell(usize),

    #[error("dof {dof} received conflicting boundary values {first} and {second}")]
    ConflictingConstraints { dof: usize, first: f64, second: f64 },

    #[error("functions live on different meshes")]
    MeshMismatch,

    #[error("point ({x}, {y}) lies outside the domain")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("matrix is singular or numerically singular: {0}")]
    SingularMatrix(String),

    #[error("non-finite integrand in cell {cell}")]
    QuadratureFailure { cell: usize },

    #[error("line search found no acceptable step after {tried} trials")]
    LineSearchExhausted { tried: usize },

    #[error("newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("adaptive newton hit the iteration cap ({iterations}); |A(u)(z)| = {eta_m:.3e} > {threshold:.3e}")]
    IterationCap { iterations: usize, eta_m: f64, threshold: f64 },

    #[error("goal functional {index} vanishes at the discrete solution; the weighted error functional is undefined")]
    ZeroReferenceFunctional { index: usize },

    #[error("weight function is singular at ({x}, {y}): {detail}")]
    FunctionalSingular { x: f64, y: f64, detail: String },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("true error is zero; effectivity index undefined")]
    ZeroTrueError,

    #[error("malformed csv: {0}")]
    MalformedCsv(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_level(self, level: usize) -> Self {
        match self {
            e @ Error::AtLevel { .. } => e,
            e => Error::AtLevel { level, source: Box::new(e) },
        }
    }

    /// Strips the level annotation, if any.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
