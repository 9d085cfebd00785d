use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PmlError>;

#[derive(Debug, Error)]
pub enum PmlError {
    #[error("invalid cross-section: {0}")]
    InvalidCrossSection(String),

    #[error("spectral parameter {mu0} is at threshold {nu} (|mu0 - nu| < 1e-8)")]
    Threshold { mu0: f64, nu: f64 },

    #[error("axial wavenumber {0} is at a threshold (|k| < 1e-8)")]
    WavenumberThreshold(Complex64),

    #[error("basis of {modes} modes cannot certify the minimum for mu0 = {mu0}: largest threshold {largest} is below mu0")]
    InsufficientModes { mu0: f64, modes: usize, largest: f64 },

    #[error("axial coordinate {z} outside the analyticity sector: {reason}")]
    Domain { z: Complex64, reason: String },

    #[error("degenerate metric at x = {x}, y = {y}: |det| = {det_abs:e}")]
    Degenerate { x: f64, y: f64, det_abs: f64 },

    #[error("invalid scaling parameter: {0}")]
    InvalidLambda(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh of {nodes} nodes exceeds the node budget {budget}")]
    Resource { nodes: usize, budget: usize },

    #[error("linear solve failed ({reason}); relative residual {residual:e}")]
    Solver { reason: String, residual: f64 },

    #[error("matrix dimension {n} exceeds the dense limit {limit}")]
    SizeLimit { n: usize, limit: usize },

    #[error("stations x1 = {x1}, x2 = {x2} are ill-conditioned for mode {mode}; try x2 = {suggested_x2:.6}")]
    Station { mode: usize, x1: f64, x2: f64, suggested_x2: f64 },

    #[error("curve sampling too coarse: distance changes by {relative_change:e} under 2x refinement")]
    Refinement { relative_change: f64 },

    #[error("inconclusive fit: {points} usable points, at least 3 required")]
    InconclusiveFit { points: usize },

    #[error("empty norm window [{0}, {1}]")]
    EmptyWindow(f64, f64),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
