//! Online data-driven stabilization of unknown discrete-time linear systems
//! whose actuator channels are corrupted by switching false-data-injection
//! attacks.
//!
//! The pipeline: collect persistently exciting input-state data from the
//! healthy plant offline, represent the family of attacked subsystems as
//! quadratic-matrix-inequality (QMI) ellipsoids in stacked `[A B]'` space,
//! tighten that family online from the most recent attacked transition by
//! solving a minimum-volume covering-ellipsoid SDP, and synthesize a state
//! feedback gain for the covering set at every step via a second SDP.
//!
//! Modules follow that pipeline:
//! - [`system`]: plant models, trajectory simulation, Hankel matrices,
//!   persistency of excitation, offline data batches, exact recovery.
//! - [`sdp`]: a small solver layer for the two conic shapes needed here
//!   (linear-objective SDPs over symmetric block LMIs, and log-det
//!   maximization), with an independent feasibility audit.
//! - [`sets`]: matrix ellipsoids, the offline ball, one-step consistency
//!   sets, and the minimum-volume intersection over-approximation.
//! - [`synthesis`]: the per-step controller SDP, gain extraction, the LQR
//!   diagnostic SDP, and Lyapunov verification oracles.
//! - [`attack`]: channel-selection matrices, attack profiles, and
//!   dwell-time-constrained switching signals.
//! - [`sim`]: the attacked closed loop end to end, baseline controllers,
//!   run diagnostics, and log serialization.
//! - [`config`]: experiment configuration (TOML) shared by the library and
//!   the command-line front end.

pub mod attack;
pub mod config;
pub mod sdp;
pub mod sets;
pub mod sim;
pub mod synthesis;
pub mod system;

/// Dense double-precision matrix used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense double-precision column vector used throughout.
pub type Vec64 = nalgebra::DVector<f64>;

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Spectral radius (largest eigenvalue modulus).
pub fn spectral_radius(m: &Mat) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "spectral radius needs a square matrix");
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest eigenvalue of a symmetric matrix (input is symmetrized first).
pub fn sym_eig_max(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.max()
}

/// Smallest eigenvalue of a symmetric matrix (input is symmetrized first).
pub fn sym_eig_min(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}
