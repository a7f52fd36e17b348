//! Bridge from the block-LMI model onto the conic solver backend.
//!
//! Both problem shapes reduce to the solver's standard form
//! `min q'x  s.t.  Ax + s = b, s in K` with PSD-triangle cones carrying the
//! LMIs. Log-det maximization adds the lower-triangular-factor encoding: an
//! auxiliary factor `Z`, the block constraint `[[X, Z], [Z', diag(Z)]] >= 0`,
//! and one exponential cone `s_i <= log Z_ii` per diagonal entry, with
//! objective `max sum_i s_i`.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, ExponentialConeT, IPSolver, NonnegativeConeT,
    PSDTriangleConeT, SolverStatus, SupportedConeT,
};

use crate::Mat;

use super::model::{LmiSense, MatExpr, SymBlockLmi, VarSet, VarShape};
use super::SdpError;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Solver-level tolerances and limits.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Residual tolerance the audit checker enforces on returned points.
    pub feasibility_tol: f64,
    /// Absolute and relative duality-gap tolerance for the backend.
    pub duality_gap_tol: f64,
    /// Default margin substituted for strict inequalities.
    pub strictness_margin: f64,
    pub max_iterations: u32,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            duality_gap_tol: 1e-8,
            strictness_margin: 1e-7,
            max_iterations: 200,
            verbose: false,
        }
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Backend statistics for one solve.
#[derive(Debug, Clone, Default)]
pub struct SolverStats {
    pub iterations: u32,
    pub solve_time: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    /// Raw backend status string, for logs.
    pub raw_status: String,
}

/// Result of a solve: status, named values, objective, statistics.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub values: BTreeMap<String, Mat>,
    pub objective: f64,
    pub stats: SolverStats,
}

impl SdpSolution {
    pub fn value(&self, name: &str) -> Option<&Mat> {
        self.values.get(name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|m| m[(0, 0)])
    }
}

/// Scaled symmetric vectorization, matching the backend's PSD triangle cone.
fn mat_to_svec(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for col in 0..n {
        for row in 0..=col {
            if row == col {
                out.push(m[(row, col)]);
            } else {
                out.push((m[(row, col)] + m[(col, row)]) / SQRT_2);
            }
        }
    }
    out
}

/// Assembled standard-form problem plus bookkeeping to interpret solutions.
struct Assembly {
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    rows: usize,
}

impl Assembly {
    fn new(n: usize) -> Self {
        Self {
            n,
            cols: vec![Vec::new(); n],
            b: Vec::new(),
            cones: Vec::new(),
            rows: 0,
        }
    }

    fn push_entry(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.cols[col].push((row, val));
        }
    }

    /// Append one LMI as a PSD-triangle (or nonnegative, when 1x1) cone block.
    fn push_lmi(&mut self, vars: &VarSet, lmi: &SymBlockLmi) {
        let d = lmi.dim();
        let sv_len = d * (d + 1) / 2;
        let base = self.rows;
        // orientation: G >= margin*I  <=>  s = G - margin*I in PSD
        //              G <= -margin*I <=>  s = -G - margin*I in PSD
        let sign = match lmi.sense {
            LmiSense::PosSemidef => 1.0,
            LmiSense::NegSemidef => -1.0,
        };
        let mut g0 = Mat::zeros(d, d);
        for (ro, co, expr) in lmi.pieces() {
            let c = expr.constant_part();
            for r in 0..c.nrows() {
                for cc in 0..c.ncols() {
                    g0[(ro + r, co + cc)] += c[(r, cc)];
                    if ro != co {
                        g0[(co + cc, ro + r)] += c[(r, cc)];
                    }
                }
            }
        }
        g0 = (&g0 + g0.transpose()) * 0.5;
        let shifted = g0 * sign - Mat::identity(d, d) * lmi.strictness_margin;
        let b_block = mat_to_svec(&shifted);
        self.b.extend_from_slice(&b_block);

        for var in lmi.referenced_vars() {
            let coords = vars.shape(var).coords();
            let off = vars.offset(var);
            for k in 0..coords {
                let mut gk = Mat::zeros(d, d);
                let mut any = false;
                for (ro, co, expr) in lmi.pieces() {
                    let dblock = expr.deriv(vars, var, k);
                    if dblock.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    any = true;
                    for r in 0..dblock.nrows() {
                        for cc in 0..dblock.ncols() {
                            gk[(ro + r, co + cc)] += dblock[(r, cc)];
                            if ro != co {
                                gk[(co + cc, ro + r)] += dblock[(r, cc)];
                            }
                        }
                    }
                }
                if !any {
                    continue;
                }
                gk = (&gk + gk.transpose()) * 0.5;
                // s = b - A x  with  s = sign*G(x) - margin*I
                // => A[:, k] = -sign * svec(G_k)
                for (r, v) in mat_to_svec(&gk).into_iter().enumerate() {
                    self.push_entry(base + r, off + k, -sign * v);
                }
            }
        }

        if d == 1 {
            self.cones.push(NonnegativeConeT(1));
        } else {
            self.cones.push(PSDTriangleConeT(d));
        }
        self.rows += sv_len;
    }

    /// Append rows for `s <= log z` via one exponential cone on scalar
    /// coordinates `s_coord` and `z_coord`.
    fn push_log_bound(&mut self, s_coord: usize, z_coord: usize) {
        let base = self.rows;
        // cone ordering (x, y, z): y*exp(x/y) <= z with s = b - Ax
        // x-row: s, y-row: 1, z-row: z
        self.b.extend_from_slice(&[0.0, 1.0, 0.0]);
        self.push_entry(base, s_coord, -1.0);
        self.push_entry(base + 2, z_coord, -1.0);
        self.cones.push(ExponentialConeT());
        self.rows += 3;
    }

    fn into_solver_parts(mut self) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let mut colptr = Vec::with_capacity(self.n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut self.cols {
            col.sort_by_key(|(r, _)| *r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        (
            CscMatrix::new(self.rows, self.n, colptr, rowval, nzval),
            self.b,
            self.cones,
        )
    }
}

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    }
}

/// Objective coefficients of a 1x1 affine expression.
fn objective_coeffs(
    vars: &VarSet,
    objective: &MatExpr,
) -> Result<(Vec<f64>, f64), SdpError> {
    if objective.rows() != 1 || objective.cols() != 1 {
        return Err(SdpError::Model(
            "objective must be a 1x1 affine expression".into(),
        ));
    }
    let mut q = vec![0.0; vars.total_coords()];
    for var in objective.referenced_vars() {
        let off = vars.offset(var);
        for k in 0..vars.shape(var).coords() {
            q[off + k] += objective.deriv(vars, var, k)[(0, 0)];
        }
    }
    Ok((q, objective.constant_part()[(0, 0)]))
}

fn run_backend(
    vars: &VarSet,
    q: &[f64],
    assembly: Assembly,
    cfg: &SolverConfig,
) -> Result<(SolveStatus, Vec<f64>, SolverStats), SdpError> {
    let n = vars.total_coords();
    let p = CscMatrix::<f64>::zeros((n, n));
    let (a, b, cones) = assembly.into_solver_parts();
    let settings = DefaultSettingsBuilder::default()
        .verbose(cfg.verbose)
        .max_iter(cfg.max_iterations)
        .tol_gap_abs(cfg.duality_gap_tol)
        .tol_gap_rel(cfg.duality_gap_tol)
        .build()
        .map_err(|e| SdpError::Model(format!("bad solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, q, &a, &b, &cones, settings)
        .map_err(|e| SdpError::Model(format!("backend rejected problem: {e}")))?;
    solver.solve();
    let status = map_status(solver.solution.status);
    let stats = SolverStats {
        iterations: solver.info.iterations,
        solve_time: solver.info.solve_time,
        primal_residual: solver.info.res_primal,
        dual_residual: solver.info.res_dual,
        duality_gap: solver.info.gap_abs,
        raw_status: format!("{:?}", solver.solution.status),
    };
    Ok((status, solver.solution.x.clone(), stats))
}

fn extract_values(vars: &VarSet, x: &[f64], skip_prefix: &str) -> BTreeMap<String, Mat> {
    let mut values = BTreeMap::new();
    for id in vars.iter_ids() {
        let name = vars.name(id);
        if !skip_prefix.is_empty() && name.starts_with(skip_prefix) {
            continue;
        }
        values.insert(name.to_string(), vars.unpack(id, x));
    }
    values
}

/// Minimize a linear functional subject to symmetric block LMIs.
///
/// Infeasibility and numerical failure are reported through the returned
/// status, never as an `Err`; errors are reserved for malformed models.
pub fn solve_linear_sdp(
    vars: &VarSet,
    constraints: &[SymBlockLmi],
    objective: &MatExpr,
    cfg: &SolverConfig,
) -> Result<SdpSolution, SdpError> {
    let (q, c0) = objective_coeffs(vars, objective)?;
    let mut assembly = Assembly::new(vars.total_coords());
    for lmi in constraints {
        assembly.push_lmi(vars, lmi);
    }
    let (status, x, stats) = run_backend(vars, &q, assembly, cfg)?;
    let (values, objective) = if status == SolveStatus::Optimal {
        let values = extract_values(vars, &x, "");
        let obj = q.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + c0;
        (values, obj)
    } else {
        (BTreeMap::new(), f64::NAN)
    };
    Ok(SdpSolution {
        status,
        values,
        objective,
        stats,
    })
}

/// Maximize `log det` of a symmetric positive definite decision variable
/// subject to symmetric block LMIs. On success the reported objective is
/// `log det` of the returned matrix.
pub fn solve_logdet_sdp(
    vars: &VarSet,
    constraints: &[SymBlockLmi],
    maximize_logdet_of: &str,
    cfg: &SolverConfig,
) -> Result<SdpSolution, SdpError> {
    let target = vars
        .id(maximize_logdet_of)
        .ok_or_else(|| SdpError::UnknownVariable(maximize_logdet_of.to_string()))?;
    let d = match vars.shape(target) {
        VarShape::Symmetric(n) => n,
        _ => return Err(SdpError::LogDetTargetNotSymmetric),
    };

    let mut all_vars = vars.clone();
    let factor = all_vars.lower_triangular("__logdet_factor", d);
    let mut log_vars = Vec::with_capacity(d);
    for i in 0..d {
        log_vars.push(all_vars.scalar(&format!("__logdet_s{i}")));
    }

    // [[X, Z], [Z', diag(Z)]] >= 0
    let x_expr = MatExpr::var(&all_vars, target);
    let z_expr = MatExpr::var(&all_vars, factor);
    let mut diag_expr = MatExpr::zeros(d, d);
    for i in 0..d {
        let mut sel = Mat::zeros(d, d);
        sel[(i, i)] = 1.0;
        diag_expr = diag_expr.plus_term(1.0, sel.clone(), factor, false, sel);
    }
    let factor_lmi = SymBlockLmi::new(
        "__logdet_factorization",
        LmiSense::PosSemidef,
        vec![
            vec![Some(x_expr), Some(z_expr)],
            vec![None, Some(diag_expr)],
        ],
    )?;

    let mut assembly = Assembly::new(all_vars.total_coords());
    for lmi in constraints {
        assembly.push_lmi(&all_vars, lmi);
    }
    assembly.push_lmi(&all_vars, &factor_lmi);
    for i in 0..d {
        // diag coordinate of column i in lower-triangle packing
        let z_ii_coord = all_vars.offset(factor) + lower_diag_coord(d, i);
        let s_coord = all_vars.offset(log_vars[i]);
        assembly.push_log_bound(s_coord, z_ii_coord);
    }

    let mut q = vec![0.0; all_vars.total_coords()];
    for &s in &log_vars {
        q[all_vars.offset(s)] = -1.0;
    }

    let (status, x, stats) = run_backend(&all_vars, &q, assembly, cfg)?;
    let (values, objective) = if status == SolveStatus::Optimal {
        let values = extract_values(&all_vars, &x, "__logdet_");
        let target_mat = values
            .get(maximize_logdet_of)
            .expect("target variable present")
            .clone();
        (values, log_det_psd(&target_mat))
    } else {
        (BTreeMap::new(), f64::NAN)
    };
    Ok(SdpSolution {
        status,
        values,
        objective,
        stats,
    })
}

/// Coordinate of the (i,i) entry in column-major lower-triangle packing.
fn lower_diag_coord(n: usize, i: usize) -> usize {
    // column j contributes n-j entries; (i,i) is the first entry of column i
    (0..i).map(|j| n - j).sum()
}

/// log det of a symmetric PD matrix; falls back to a clamped eigenvalue sum
/// when the Cholesky factorization fails marginally.
pub fn log_det_psd(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(chol) = sym.clone().cholesky() {
        2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    } else {
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&v| v.max(f64::MIN_POSITIVE).ln())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::model::{LmiSense, MatExpr, SymBlockLmi, VarSet};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn trace_minimization_forced_by_psd_bound() {
        // min tr(P) s.t. P >= I (2x2)  ->  P = I, objective 2
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2);
        let lmi = SymBlockLmi::new(
            "P-minus-I",
            LmiSense::PosSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, p).plus_const(-Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let obj = MatExpr::zeros(1, 1).plus_trace(1.0, p);
        let sol = solve_linear_sdp(&vars, &[lmi], &obj, &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-6);
        let pv = sol.value("P").unwrap();
        assert!((pv - Mat::identity(2, 2)).norm() < 1e-5);
    }

    #[test]
    fn scalar_on_diagonal_psd_condition() {
        // min g s.t. [[g, 1], [1, g]] >= 0  ->  g = 1
        let mut vars = VarSet::new();
        let g = vars.scalar("g");
        let mut off = Mat::zeros(1, 1);
        off[(0, 0)] = 1.0;
        let diag = MatExpr::zeros(1, 1).plus_scaled(&vars, Mat::identity(1, 1), g);
        let lmi = SymBlockLmi::new(
            "toeplitz",
            LmiSense::PosSemidef,
            vec![
                vec![Some(diag.clone()), Some(MatExpr::constant(off))],
                vec![None, Some(diag)],
            ],
        )
        .unwrap();
        let obj = MatExpr::zeros(1, 1).plus_scaled(&vars, Mat::identity(1, 1), g);
        let sol = solve_linear_sdp(&vars, &[lmi], &obj, &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_discrete_lyapunov_boundary() {
        // find p > 0 with 0.25 p - p <= -1; minimal p is 4/3
        let mut vars = VarSet::new();
        let p = vars.scalar("p");
        let ineq = SymBlockLmi::new(
            "decrease",
            LmiSense::NegSemidef,
            vec![vec![Some(
                MatExpr::zeros(1, 1)
                    .plus_scaled(&vars, Mat::from_element(1, 1, -0.75), p)
                    .plus_const(Mat::from_element(1, 1, 1.0)),
            )]],
        )
        .unwrap();
        let pos = SymBlockLmi::new(
            "positive",
            LmiSense::PosSemidef,
            vec![vec![Some(MatExpr::var(&vars, p))]],
        )
        .unwrap();
        let obj = MatExpr::var(&vars, p);
        let sol = solve_linear_sdp(&vars, &[ineq, pos], &obj, &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let pv = sol.scalar("p").unwrap();
        assert!(pv >= 4.0 / 3.0 - 1e-6, "p = {pv}");
        assert!((pv - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_reported_as_status_not_crash() {
        // P >= I and P <= -I simultaneously
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2);
        let above = SymBlockLmi::new(
            "above",
            LmiSense::PosSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, p).plus_const(-Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let below = SymBlockLmi::new(
            "below",
            LmiSense::NegSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, p).plus_const(Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let obj = MatExpr::zeros(1, 1).plus_trace(1.0, p);
        let sol = solve_linear_sdp(&vars, &[above, below], &obj, &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn logdet_monotone_under_psd_upper_bound() {
        // max log det(A) s.t. A <= I  ->  A = I, log det = 0
        let mut vars = VarSet::new();
        let a = vars.symmetric("A", 2);
        let ub = SymBlockLmi::new(
            "upper",
            LmiSense::NegSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, a).plus_const(-Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let sol = solve_logdet_sdp(&vars, &[ub], "A", &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-5, "objective {}", sol.objective);
        assert!((sol.value("A").unwrap() - Mat::identity(2, 2)).norm() < 1e-4);
    }

    #[test]
    fn logdet_attains_diagonal_bound() {
        // max log det(A) s.t. A <= diag(4, 9)  ->  A = diag(4, 9), ln 36
        let mut vars = VarSet::new();
        let a = vars.symmetric("A", 2);
        let bound = Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let ub = SymBlockLmi::new(
            "upper",
            LmiSense::NegSemidef,
            vec![vec![Some(MatExpr::var(&vars, a).plus_const(-bound.clone()))]],
        )
        .unwrap();
        let sol = solve_logdet_sdp(&vars, &[ub], "A", &cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(
            (sol.objective - 36.0f64.ln()).abs() < 1e-5,
            "objective {}",
            sol.objective
        );
        assert!((sol.value("A").unwrap() - bound).norm() < 1e-3);
    }

    #[test]
    fn deterministic_across_repeat_solves() {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 3);
        let target = Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let lmi = SymBlockLmi::new(
            "lb",
            LmiSense::PosSemidef,
            vec![vec![Some(MatExpr::var(&vars, p).plus_const(-target))]],
        )
        .unwrap();
        let obj = MatExpr::zeros(1, 1).plus_trace(1.0, p);
        let s1 = solve_linear_sdp(&vars, std::slice::from_ref(&lmi), &obj, &cfg()).unwrap();
        let s2 = solve_linear_sdp(&vars, std::slice::from_ref(&lmi), &obj, &cfg()).unwrap();
        assert_eq!(s1.status, s2.status);
        assert!((s1.objective - s2.objective).abs() < 1e-7);
    }
}
