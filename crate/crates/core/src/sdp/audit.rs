//! Independent feasibility audit and problem dump.
//!
//! The audit re-evaluates every block LMI at a returned point with plain
//! dense eigenvalue computations, deliberately bypassing the solver's own
//! residuals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::Mat;

use super::model::{LmiSense, MatExpr, SymBlockLmi, VarSet};
use super::SdpError;

/// Audit outcome for one LMI.
#[derive(Debug, Clone)]
pub struct LmiAudit {
    pub name: String,
    pub dim: usize,
    /// Oriented margin: smallest eigenvalue of the matrix brought to the
    /// `>= 0` orientation. Nonnegative means strictly satisfied.
    pub margin: f64,
    pub pass: bool,
}

/// Audit outcome over a constraint set.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub records: Vec<LmiAudit>,
    pub tol: f64,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn worst(&self) -> f64 {
        self.records.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Re-evaluate every LMI at `values`; each must hold to within `tol`.
pub fn audit_feasibility(
    vars: &VarSet,
    constraints: &[SymBlockLmi],
    values: &BTreeMap<String, Mat>,
    tol: f64,
) -> Result<AuditReport, SdpError> {
    let mut records = Vec::with_capacity(constraints.len());
    for lmi in constraints {
        let g = lmi.eval(vars, values)?;
        let oriented = match lmi.sense {
            LmiSense::PosSemidef => g,
            LmiSense::NegSemidef => -g,
        };
        let margin = oriented.symmetric_eigen().eigenvalues.min();
        records.push(LmiAudit {
            name: lmi.name.clone(),
            dim: lmi.dim(),
            margin,
            pass: margin >= -tol,
        });
    }
    Ok(AuditReport { records, tol })
}

/// Text dump of a model in sparse-triplet-per-block form, for cross-checking
/// against external solvers.
pub fn dump_problem(
    vars: &VarSet,
    constraints: &[SymBlockLmi],
    objective: Option<&MatExpr>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# variables: name shape coords offset");
    for id in vars.iter_ids() {
        let shape = vars.shape(id);
        let _ = writeln!(
            out,
            "var {} {:?} {} {}",
            vars.name(id),
            shape,
            shape.coords(),
            vars.offset(id)
        );
    }
    if let Some(obj) = objective {
        let _ = writeln!(out, "# objective: coord value (minimize)");
        for var in obj.referenced_vars() {
            for k in 0..vars.shape(var).coords() {
                let c = obj.deriv(vars, var, k)[(0, 0)];
                if c != 0.0 {
                    let _ = writeln!(out, "obj {} {:.17e}", vars.offset(var) + k, c);
                }
            }
        }
        let c0 = obj.constant_part()[(0, 0)];
        if c0 != 0.0 {
            let _ = writeln!(out, "obj const {c0:.17e}");
        }
    }
    for lmi in constraints {
        let sense = match lmi.sense {
            LmiSense::PosSemidef => ">=0",
            LmiSense::NegSemidef => "<=0",
        };
        let _ = writeln!(
            out,
            "lmi {} dim {} sense {} margin {:.3e}",
            lmi.name,
            lmi.dim(),
            sense,
            lmi.strictness_margin
        );
        let d = lmi.dim();
        // constant part
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
        for r in 0..d {
            for c in r..d {
                let v = (g0[(r, c)] + g0[(c, r)]) * 0.5;
                if v != 0.0 {
                    let _ = writeln!(out, "const {r} {c} {v:.17e}");
                }
            }
        }
        for var in lmi.referenced_vars() {
            for k in 0..vars.shape(var).coords() {
                let mut gk = Mat::zeros(d, d);
                for (ro, co, expr) in lmi.pieces() {
                    let dblock = expr.deriv(vars, var, k);
                    for r in 0..dblock.nrows() {
                        for cc in 0..dblock.ncols() {
                            gk[(ro + r, co + cc)] += dblock[(r, cc)];
                            if ro != co {
                                gk[(co + cc, ro + r)] += dblock[(r, cc)];
                            }
                        }
                    }
                }
                for r in 0..d {
                    for c in r..d {
                        let v = (gk[(r, c)] + gk[(c, r)]) * 0.5;
                        if v != 0.0 {
                            let _ = writeln!(
                                out,
                                "coeff {} {r} {c} {v:.17e}",
                                vars.offset(var) + k
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::model::{LmiSense, MatExpr, SymBlockLmi, VarSet};
    use crate::sdp::{solve_linear_sdp, SolveStatus, SolverConfig};

    #[test]
    fn audit_agrees_with_solver_on_feasible_point() {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2);
        let lmi = SymBlockLmi::new(
            "lb",
            LmiSense::PosSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, p).plus_const(-Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let obj = MatExpr::zeros(1, 1).plus_trace(1.0, p);
        let sol =
            solve_linear_sdp(&vars, std::slice::from_ref(&lmi), &obj, &SolverConfig::default())
                .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let report = audit_feasibility(&vars, &[lmi], &sol.values, 1e-7).unwrap();
        assert!(report.pass(), "margins: {:?}", report.records);
    }

    #[test]
    fn audit_flags_violations() {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2);
        let lmi = SymBlockLmi::new(
            "lb",
            LmiSense::PosSemidef,
            vec![vec![Some(
                MatExpr::var(&vars, p).plus_const(-Mat::identity(2, 2)),
            )]],
        )
        .unwrap();
        let mut values = std::collections::BTreeMap::new();
        values.insert("P".to_string(), Mat::identity(2, 2) * 0.5);
        let report = audit_feasibility(&vars, &[lmi], &values, 1e-7).unwrap();
        assert!(!report.pass());
        assert!((report.worst() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn dump_contains_triplets() {
        let mut vars = VarSet::new();
        let g = vars.scalar("g");
        let lmi = SymBlockLmi::new(
            "pos",
            LmiSense::PosSemidef,
            vec![vec![Some(MatExpr::var(&vars, g))]],
        )
        .unwrap();
        let obj = MatExpr::var(&vars, g);
        let dump = dump_problem(&vars, &[lmi], Some(&obj));
        assert!(dump.contains("var g Scalar 1 0"));
        assert!(dump.contains("lmi pos dim 1 sense >=0"));
        assert!(dump.contains("coeff 0 0 0"));
        assert!(dump.contains("obj 0"));
    }
}
