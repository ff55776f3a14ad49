use thiserror::Error;

/// Failures while building or reading a mesh.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("subdivision count must be at least 1")]
    ZeroSubdivisions,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("element {element} references vertex {vertex}, but only {count} vertices exist")]
    DanglingVertex {
        element: usize,
        vertex: usize,
        count: usize,
    },
    #[error("element {element} has {count} vertices, at least 3 are required")]
    TooFewVertices { element: usize, count: usize },
    #[error("element {element} is wound clockwise (signed area {area:e})")]
    Orientation { element: usize, area: f64 },
    #[error("element {element} has non-positive area {area:e}")]
    Degenerate { element: usize, area: f64 },
    #[error("edge ({a}, {b}) is shared by more than two elements")]
    OverSharedFace { a: usize, b: usize },
    #[error("edge ({a}, {b}) is traversed in the same direction by two elements")]
    InconsistentOrientation { a: usize, b: usize },
    #[error("element {element} repeats a vertex")]
    RepeatedVertex { element: usize },
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("degenerate triangle in quadrature (area {area:e})")]
    DegenerateTriangle { area: f64 },
    #[error("element {element} is not convex")]
    NonConvex { element: usize },
    #[error("polynomial degree k must be at least 1 (got {0})")]
    InvalidDegree(usize),
    #[error("invalid material parameters mu = {mu}, lambda = {lambda}")]
    InvalidMaterial { mu: f64, lambda: f64 },
    #[error("singular {what} on element {element}")]
    Singular { what: &'static str, element: usize },
    #[error("cell block of element {element} is not positive definite")]
    CellBlockNotSpd { element: usize },
    #[error("global matrix factorization failed: {0}")]
    Factorization(String),
    #[error("linear solve did not reach relative residual {target:e} (got {achieved:e})")]
    Residual { achieved: f64, target: f64 },
    #[error("solution does not match the discretization: {0}")]
    Mismatch(String),
    #[error("malformed CSV: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
