//! Conjugate Gradient benchmark: 27-point Poisson matrices in CSR form, the
//! solver with its residual recomputed every 50 iterations, and verification
//! against pristine inputs.

mod csr;
pub mod io;
mod solver;

pub use csr::{generate_poisson27, CsrMatrix, STENCIL_DIAGONAL, STENCIL_OFF_DIAGONAL};
pub use solver::{
    norm_sq, ones_rhs, relative_tol, residual_norm_sq, verify, AccessObserver, CgProblem, CgScalars, NoObserver,
    SolveOptions, SolveRecord, BLOCK_ROWS, DEFAULT_TOL_FACTOR, DEFAULT_T_MAX, RECOMPUTE_PERIOD,
};

#[derive(Debug, thiserror::Error)]
pub enum CgError {
    #[error("grid side must be at least 2, got {0}")]
    InvalidSide(usize),
    #[error("grid side {side} does not fit in the address space")]
    Capacity { side: usize },
    #[error("invalid CSR matrix: {0}")]
    InvalidMatrix(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("breakdown: <q, d> = 0 at iteration {iteration}")]
    Breakdown { iteration: usize },
    #[error("deadline exceeded after {iterations} iterations")]
    DeadlineExceeded { iterations: usize },
    #[error("bad magic number")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Generated Poisson system with `b = A * 1` and `tol = tol_factor * ||b||²`.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    pub side: usize,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub tol: f64,
}

impl PoissonSystem {
    pub fn generate(side: usize, tol_factor: f64) -> Result<Self, CgError> {
        let a = generate_poisson27(side)?;
        Ok(Self::from_matrix(side, a, tol_factor))
    }

    pub fn from_matrix(side: usize, a: CsrMatrix, tol_factor: f64) -> Self {
        let b = ones_rhs(&a);
        let tol = relative_tol(&b, tol_factor);
        Self { side, a, b, tol }
    }

    pub fn problem(&self) -> Result<CgProblem, CgError> {
        CgProblem::new(&self.a, &self.b)
    }

    pub fn verify(&self, x: &[f64]) -> bool {
        verify(&self.a, &self.b, x, self.tol)
    }
}
