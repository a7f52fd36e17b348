//! Decision variables, affine matrix expressions, and symmetric block LMIs.
//!
//! Symmetric variables use the scaled symmetric vectorization (column-major
//! upper triangle, off-diagonal entries scaled by sqrt(2)) so inner products
//! agree between the solver backend and the audit checker.

use std::collections::BTreeMap;

use crate::Mat;

use super::SdpError;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Shape (and packing) of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    Scalar,
    /// n-by-n symmetric, packed as svec.
    Symmetric(usize),
    /// rows-by-cols general matrix, packed column-major.
    Rect(usize, usize),
    /// n-by-n lower triangular, packed column-major lower triangle.
    LowerTriangular(usize),
}

impl VarShape {
    pub fn coords(&self) -> usize {
        match *self {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) | VarShape::LowerTriangular(n) => n * (n + 1) / 2,
            VarShape::Rect(r, c) => r * c,
        }
    }

    pub fn rows(&self) -> usize {
        match *self {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) | VarShape::LowerTriangular(n) => n,
            VarShape::Rect(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) | VarShape::LowerTriangular(n) => n,
            VarShape::Rect(_, c) => c,
        }
    }
}

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Ordered set of declared decision variables.
#[derive(Debug, Clone, Default)]
pub struct VarSet {
    names: Vec<String>,
    shapes: Vec<VarShape>,
    offsets: Vec<usize>,
    total: usize,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, shape: VarShape) -> VarId {
        assert!(
            self.id(name).is_none(),
            "variable `{name}` declared twice"
        );
        let id = VarId(self.names.len());
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.offsets.push(self.total);
        self.total += shape.coords();
        id
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarShape::Scalar)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarShape::Symmetric(n))
    }

    pub fn rect(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarShape::Rect(rows, cols))
    }

    pub(crate) fn lower_triangular(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarShape::LowerTriangular(n))
    }

    pub fn id(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(VarId)
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: VarId) -> VarShape {
        self.shapes[id.0]
    }

    pub fn offset(&self, id: VarId) -> usize {
        self.offsets[id.0]
    }

    pub fn total_coords(&self) -> usize {
        self.total
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.names.len()).map(VarId)
    }

    /// Basis matrix of coordinate `k` of variable `id`: the matrix value the
    /// variable takes when that packed coordinate is 1 and the rest are 0.
    pub(crate) fn basis(&self, id: VarId, k: usize) -> Mat {
        let shape = self.shape(id);
        match shape {
            VarShape::Scalar => Mat::from_element(1, 1, 1.0),
            VarShape::Symmetric(n) => {
                let (i, j) = svec_index_to_pair(k);
                let mut e = Mat::zeros(n, n);
                if i == j {
                    e[(i, j)] = 1.0;
                } else {
                    e[(i, j)] = 1.0 / SQRT_2;
                    e[(j, i)] = 1.0 / SQRT_2;
                }
                e
            }
            VarShape::Rect(r, c) => {
                let col = k / r;
                let row = k % r;
                let mut e = Mat::zeros(r, c);
                e[(row, col)] = 1.0;
                e
            }
            VarShape::LowerTriangular(n) => {
                let (row, col) = lower_index_to_pair(n, k);
                let mut e = Mat::zeros(n, n);
                e[(row, col)] = 1.0;
                e
            }
        }
    }

    /// Reconstruct the matrix value of `id` from the full coordinate vector.
    pub(crate) fn unpack(&self, id: VarId, x: &[f64]) -> Mat {
        let shape = self.shape(id);
        let off = self.offset(id);
        match shape {
            VarShape::Scalar => Mat::from_element(1, 1, x[off]),
            VarShape::Symmetric(n) => {
                let mut m = Mat::zeros(n, n);
                let mut k = 0;
                for j in 0..n {
                    for i in 0..=j {
                        if i == j {
                            m[(i, j)] = x[off + k];
                        } else {
                            m[(i, j)] = x[off + k] / SQRT_2;
                            m[(j, i)] = x[off + k] / SQRT_2;
                        }
                        k += 1;
                    }
                }
                m
            }
            VarShape::Rect(r, c) => {
                let mut m = Mat::zeros(r, c);
                for k in 0..r * c {
                    m[(k % r, k / r)] = x[off + k];
                }
                m
            }
            VarShape::LowerTriangular(n) => {
                let mut m = Mat::zeros(n, n);
                for k in 0..n * (n + 1) / 2 {
                    let (row, col) = lower_index_to_pair(n, k);
                    m[(row, col)] = x[off + k];
                }
                m
            }
        }
    }
}

/// svec coordinate -> (row, col) with row <= col, column-major upper triangle.
fn svec_index_to_pair(k: usize) -> (usize, usize) {
    let mut col = 0usize;
    let mut base = 0usize;
    while base + col + 1 <= k {
        base += col + 1;
        col += 1;
    }
    (k - base, col)
}

/// Packed lower-triangle coordinate -> (row, col), column-major, row >= col.
fn lower_index_to_pair(n: usize, k: usize) -> (usize, usize) {
    let mut col = 0usize;
    let mut base = 0usize;
    loop {
        let len = n - col;
        if k < base + len {
            return (col + (k - base), col);
        }
        base += len;
        col += 1;
    }
}

/// One summand of an affine matrix expression.
#[derive(Debug, Clone)]
enum Term {
    /// `left * V * right` or `left * V' * right`.
    Sandwich {
        left: Mat,
        var: VarId,
        transpose: bool,
        right: Mat,
    },
    /// `mat * v` for a scalar variable `v`.
    ScaledMat { mat: Mat, var: VarId },
    /// `alpha * tr(V)`, a 1x1 contribution.
    Trace { alpha: f64, var: VarId },
}

/// Affine matrix-valued expression in declared variables.
#[derive(Debug, Clone)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    terms: Vec<Term>,
    constant: Mat,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            terms: Vec::new(),
            constant: Mat::zeros(rows, cols),
        }
    }

    pub fn constant(m: Mat) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            terms: Vec::new(),
            constant: m,
        }
    }

    /// The bare variable `V`.
    pub fn var(vars: &VarSet, id: VarId) -> Self {
        let shape = vars.shape(id);
        Self::zeros(shape.rows(), shape.cols()).plus_term(
            1.0,
            Mat::identity(shape.rows(), shape.rows()),
            id,
            false,
            Mat::identity(shape.cols(), shape.cols()),
        )
    }

    /// The transposed variable `V'`.
    pub fn var_t(vars: &VarSet, id: VarId) -> Self {
        let shape = vars.shape(id);
        Self::zeros(shape.cols(), shape.rows()).plus_term(
            1.0,
            Mat::identity(shape.cols(), shape.cols()),
            id,
            true,
            Mat::identity(shape.rows(), shape.rows()),
        )
    }

    /// Add `alpha * left * op(V) * right` to this expression.
    pub fn plus_term(
        mut self,
        alpha: f64,
        left: Mat,
        var: VarId,
        transpose: bool,
        right: Mat,
    ) -> Self {
        assert_eq!(left.nrows(), self.rows, "term row mismatch");
        assert_eq!(right.ncols(), self.cols, "term col mismatch");
        self.terms.push(Term::Sandwich {
            left: left * alpha,
            var,
            transpose,
            right,
        });
        self
    }

    /// Add `mat * v` for scalar variable `v`.
    pub fn plus_scaled(mut self, vars: &VarSet, mat: Mat, var: VarId) -> Self {
        assert_eq!(vars.shape(var), VarShape::Scalar, "plus_scaled needs a scalar variable");
        assert_eq!(mat.nrows(), self.rows);
        assert_eq!(mat.ncols(), self.cols);
        self.terms.push(Term::ScaledMat { mat, var });
        self
    }

    /// Add `alpha * tr(V)`; the expression must be 1x1.
    pub fn plus_trace(mut self, alpha: f64, var: VarId) -> Self {
        assert_eq!((self.rows, self.cols), (1, 1), "trace terms are 1x1");
        self.terms.push(Term::Trace { alpha, var });
        self
    }

    /// Add a constant matrix.
    pub fn plus_const(mut self, m: Mat) -> Self {
        assert_eq!(m.nrows(), self.rows);
        assert_eq!(m.ncols(), self.cols);
        self.constant += m;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Evaluate at a named point (used by the audit checker).
    pub fn eval(
        &self,
        vars: &VarSet,
        values: &BTreeMap<String, Mat>,
    ) -> Result<Mat, SdpError> {
        let mut out = self.constant.clone();
        for term in &self.terms {
            let var = match term {
                Term::Sandwich { var, .. } | Term::ScaledMat { var, .. } | Term::Trace { var, .. } => *var,
            };
            let name = vars.name(var);
            let v = values
                .get(name)
                .ok_or_else(|| SdpError::UnknownVariable(name.to_string()))?;
            match term {
                Term::Sandwich {
                    left,
                    transpose,
                    right,
                    ..
                } => {
                    let mid = if *transpose { v.transpose() } else { v.clone() };
                    out += left * mid * right;
                }
                Term::ScaledMat { mat, .. } => {
                    out += mat * v[(0, 0)];
                }
                Term::Trace { alpha, .. } => {
                    out[(0, 0)] += alpha * v.trace();
                }
            }
        }
        Ok(out)
    }

    /// Derivative with respect to packed coordinate `k` of variable `id`.
    pub(crate) fn deriv(&self, vars: &VarSet, id: VarId, k: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        let mut basis: Option<Mat> = None;
        for term in &self.terms {
            match term {
                Term::Sandwich {
                    left,
                    var,
                    transpose,
                    right,
                } if *var == id => {
                    let e = basis.get_or_insert_with(|| vars.basis(id, k));
                    let mid = if *transpose { e.transpose() } else { e.clone() };
                    out += left * mid * right;
                }
                Term::ScaledMat { mat, var } if *var == id => {
                    // scalars have a single coordinate with basis value 1
                    out += mat;
                }
                Term::Trace { alpha, var } if *var == id => {
                    let e = basis.get_or_insert_with(|| vars.basis(id, k));
                    out[(0, 0)] += alpha * e.trace();
                }
                _ => {}
            }
        }
        out
    }

    /// Which variables this expression references.
    pub(crate) fn referenced_vars(&self) -> Vec<VarId> {
        let mut ids: Vec<VarId> = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Sandwich { var, .. } | Term::ScaledMat { var, .. } | Term::Trace { var, .. } => *var,
            })
            .collect();
        ids.sort_by_key(|v| v.0);
        ids.dedup();
        ids
    }

    pub(crate) fn constant_part(&self) -> &Mat {
        &self.constant
    }
}

impl std::ops::Add for MatExpr {
    type Output = MatExpr;
    fn add(mut self, rhs: MatExpr) -> MatExpr {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl std::ops::Neg for MatExpr {
    type Output = MatExpr;
    fn neg(mut self) -> MatExpr {
        self.constant = -self.constant;
        for term in &mut self.terms {
            match term {
                Term::Sandwich { left, .. } => *left = -left.clone(),
                Term::ScaledMat { mat, .. } => *mat = -mat.clone(),
                Term::Trace { alpha, .. } => *alpha = -*alpha,
            }
        }
        self
    }
}

/// Orientation of an LMI constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiSense {
    /// Assembled block matrix must be negative semidefinite.
    NegSemidef,
    /// Assembled block matrix must be positive semidefinite.
    PosSemidef,
}

/// Symmetric block LMI: a grid of affine blocks whose assembled matrix is
/// constrained to one side of the PSD cone. Only the upper triangle of the
/// grid is given; lower blocks are mirrored by transposition.
#[derive(Debug, Clone)]
pub struct SymBlockLmi {
    pub name: String,
    grid: Vec<Vec<Option<MatExpr>>>,
    row_dims: Vec<usize>,
    pub sense: LmiSense,
    /// Margin `eps` tightening the constraint to `G +/- eps I` so strict
    /// inequalities become representable.
    pub strictness_margin: f64,
}

impl SymBlockLmi {
    pub fn new(
        name: &str,
        sense: LmiSense,
        grid: Vec<Vec<Option<MatExpr>>>,
    ) -> Result<Self, SdpError> {
        let nb = grid.len();
        let mut row_dims = vec![0usize; nb];
        for (i, row) in grid.iter().enumerate() {
            if row.len() != nb {
                return Err(SdpError::Model(format!(
                    "LMI `{name}`: grid row {i} has {} entries, expected {nb}",
                    row.len()
                )));
            }
            match &row[i] {
                Some(e) if e.rows() == e.cols() => row_dims[i] = e.rows(),
                Some(_) => {
                    return Err(SdpError::Model(format!(
                        "LMI `{name}`: diagonal block ({i},{i}) is not square"
                    )))
                }
                None => {
                    return Err(SdpError::Model(format!(
                        "LMI `{name}`: diagonal block ({i},{i}) missing"
                    )))
                }
            }
        }
        for (i, row) in grid.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                if j < i && entry.is_some() {
                    return Err(SdpError::Model(format!(
                        "LMI `{name}`: block ({i},{j}) below the diagonal must be None"
                    )));
                }
                if let Some(e) = entry {
                    if e.rows() != row_dims[i] || e.cols() != row_dims[j] {
                        return Err(SdpError::Model(format!(
                            "LMI `{name}`: block ({i},{j}) is {}x{}, expected {}x{}",
                            e.rows(),
                            e.cols(),
                            row_dims[i],
                            row_dims[j]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            name: name.to_string(),
            grid,
            row_dims,
            sense,
            strictness_margin: 0.0,
        })
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.strictness_margin = margin;
        self
    }

    pub fn dim(&self) -> usize {
        self.row_dims.iter().sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.row_dims.len());
        let mut acc = 0;
        for d in &self.row_dims {
            offs.push(acc);
            acc += d;
        }
        offs
    }

    /// Iterate the stored upper-triangle blocks as (row offset, col offset, expr).
    pub(crate) fn pieces(&self) -> Vec<(usize, usize, &MatExpr)> {
        let offs = self.offsets();
        let mut out = Vec::new();
        for (i, row) in self.grid.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                if let Some(e) = entry {
                    out.push((offs[i], offs[j], e));
                }
            }
        }
        out
    }

    /// Assembled numeric matrix at a named point; exactly symmetric.
    pub fn eval(
        &self,
        vars: &VarSet,
        values: &BTreeMap<String, Mat>,
    ) -> Result<Mat, SdpError> {
        let d = self.dim();
        let mut g = Mat::zeros(d, d);
        for (ro, co, expr) in self.pieces() {
            let block = expr.eval(vars, values)?;
            for r in 0..block.nrows() {
                for c in 0..block.ncols() {
                    g[(ro + r, co + c)] += block[(r, c)];
                    if ro != co {
                        g[(co + c, ro + r)] += block[(r, c)];
                    }
                }
            }
        }
        // diagonal blocks are used as given; symmetrize for safety
        Ok((&g + g.transpose()) * 0.5)
    }

    pub(crate) fn referenced_vars(&self) -> Vec<VarId> {
        let mut ids = Vec::new();
        for (_, _, e) in self.pieces() {
            ids.extend(e.referenced_vars());
        }
        ids.sort_by_key(|v| v.0);
        ids.dedup();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_pair_order_matches_packing() {
        // order: (0,0), (0,1), (1,1), (0,2), (1,2), (2,2)
        let expect = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)];
        for (k, &(i, j)) in expect.iter().enumerate() {
            assert_eq!(svec_index_to_pair(k), (i, j));
        }
    }

    #[test]
    fn lower_pair_order_matches_packing() {
        // n=3 order: (0,0), (1,0), (2,0), (1,1), (2,1), (2,2)
        let expect = [(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (2, 2)];
        for (k, &(i, j)) in expect.iter().enumerate() {
            assert_eq!(lower_index_to_pair(3, k), (i, j));
        }
    }

    #[test]
    fn symmetric_unpack_round_trips_basis() {
        let mut vars = VarSet::new();
        let p = vars.symmetric("p", 3);
        let n_coords = vars.shape(p).coords();
        for k in 0..n_coords {
            let mut x = vec![0.0; vars.total_coords()];
            x[vars.offset(p) + k] = 1.0;
            let m = vars.unpack(p, &x);
            let e = vars.basis(p, k);
            assert!((m - e).norm() < 1e-14);
        }
    }

    #[test]
    fn expr_eval_matches_hand_computation() {
        let mut vars = VarSet::new();
        let y = vars.rect("y", 2, 3);
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let expr = MatExpr::zeros(2, 3).plus_term(2.0, a.clone(), y, false, Mat::identity(3, 3));
        let yval = Mat::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
        let mut point = BTreeMap::new();
        point.insert("y".to_string(), yval.clone());
        let got = expr.eval(&vars, &point).unwrap();
        assert!((got - a * yval * 2.0).norm() < 1e-14);
    }

    #[test]
    fn lmi_rejects_bad_blocks() {
        let mut vars = VarSet::new();
        let p = vars.symmetric("p", 2);
        let bad = SymBlockLmi::new(
            "bad",
            LmiSense::PosSemidef,
            vec![
                vec![Some(MatExpr::var(&vars, p)), None],
                vec![Some(MatExpr::var(&vars, p)), Some(MatExpr::var(&vars, p))],
            ],
        );
        assert!(bad.is_err());
    }
}
