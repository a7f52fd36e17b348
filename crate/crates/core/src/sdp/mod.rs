//! Solver-agnostic layer for the two conic problem shapes used by the
//! pipeline: linear-objective SDPs over symmetric block LMIs, and log-det
//! maximization subject to the same constraint family.

mod audit;
mod model;
mod solve;

pub use audit::{audit_feasibility, dump_problem, AuditReport, LmiAudit};
pub use model::{LmiSense, MatExpr, SymBlockLmi, VarId, VarSet, VarShape};
pub use solve::{
    log_det_psd, solve_linear_sdp, solve_logdet_sdp, SdpSolution, SolveStatus, SolverConfig,
    SolverStats,
};

/// Modeling errors; solver outcomes are reported via [`SolveStatus`] instead.
#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("malformed model: {0}")]
    Model(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("log-det target must be a symmetric matrix variable")]
    LogDetTargetNotSymmetric,
}
