use thiserror::Error;

/// Errors produced by problem construction, parsing and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("infeasible point: constraint {name} violated by {violation:.3e}")]
    Infeasible { name: String, violation: f64 },

    #[error("empty normal cone: multiplier component {index} is negative ({value:.3e})")]
    EmptyNormalCone { index: usize, value: f64 },

    #[error("control-constraint regularity violated at node {node}: active gradients rank {rank} < {active} active rows")]
    RegularityViolation { node: usize, rank: usize, active: usize },

    #[error("complementarity violated at node {node}, row {row}: lambda*G = {value:.3e}")]
    ComplementarityViolation { node: usize, row: usize, value: f64 },

    #[error("non-finite value during state propagation at node {node}")]
    NonFinitePropagation { node: usize },

    #[error("retraction onto the equality manifold failed for {failed} of {total} samples; reduce the probe radius")]
    RetractionFailure { failed: usize, total: usize },

    #[error("mesh with N = {n} not divisible by s = {s}")]
    MeshIndivisible { n: usize, s: usize },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
