//! Linear-system representation, trajectory generation, Hankel and
//! persistency-of-excitation machinery, and offline data matrices.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Mat, Vec64};

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Default relative rank tolerance for persistency-of-excitation checks.
pub const PE_RANK_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("window length {len} is shorter than block depth {depth}")]
    WindowTooShort { len: usize, depth: usize },
    #[error("data not identifiable: rank(W0) = {rank} < {needed}")]
    NotIdentifiable { rank: usize, needed: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(String),
}

/// Discrete-time linear plant `x(t+1) = A x(t) + B u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Mat,
    pub b: Mat,
}

impl SystemModel {
    pub fn new(a: Mat, b: Mat) -> Result<Self, SystemError> {
        if a.nrows() != a.ncols() {
            return Err(SystemError::Dimension("state map must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(SystemError::Dimension(format!(
                "input map has {} rows, expected {}",
                b.nrows(),
                a.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Stacked representation `Z = [A B]'`.
    pub fn stack(&self) -> Mat {
        let n_x = self.n_states();
        let n_u = self.n_inputs();
        let mut ab = Mat::zeros(n_x, n_x + n_u);
        ab.view_mut((0, 0), (n_x, n_x)).copy_from(&self.a);
        ab.view_mut((0, n_x), (n_x, n_u)).copy_from(&self.b);
        ab.transpose()
    }

    /// Recover `(A, B)` from a stacked `Z = [A B]'`.
    pub fn from_stack(z: &Mat, n_x: usize) -> Result<Self, SystemError> {
        if z.ncols() != n_x || z.nrows() <= n_x {
            return Err(SystemError::Dimension(format!(
                "stack is {}x{}, expected ({n_x}+n_u)x{n_x}",
                z.nrows(),
                z.ncols()
            )));
        }
        let ab = z.transpose();
        let n_u = z.nrows() - n_x;
        let a = ab.view((0, 0), (n_x, n_x)).into_owned();
        let b = ab.view((0, n_x), (n_x, n_u)).into_owned();
        Self::new(a, b)
    }

    /// Rank of `[B AB ... A^(n-1)B]`, for controllability oracles.
    pub fn controllability_rank(&self, rank_tol: f64) -> usize {
        let n = self.n_states();
        let mut blocks = Vec::with_capacity(n);
        let mut pow = self.b.clone();
        for _ in 0..n {
            blocks.push(pow.clone());
            pow = &self.a * &pow;
        }
        let mut ctrb = Mat::zeros(n, n * self.n_inputs());
        for (i, blk) in blocks.iter().enumerate() {
            ctrb.view_mut((0, i * self.n_inputs()), (n, self.n_inputs()))
                .copy_from(blk);
        }
        matrix_rank(&ctrb, rank_tol)
    }
}

/// Ordered window of equally-sized real vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    values: Vec<Vec64>,
    pub t0: usize,
}

impl SignalWindow {
    pub fn new(values: Vec<Vec64>, t0: usize) -> Result<Self, SystemError> {
        if values.is_empty() {
            return Err(SystemError::Dimension("signal window is empty".into()));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(SystemError::Dimension(
                "signal vectors must share one nonzero dimension".into(),
            ));
        }
        Ok(Self { values, t0 })
    }

    pub fn from_scalars(values: &[f64]) -> Self {
        Self::new(
            values.iter().map(|&v| DVector::from_element(1, v)).collect(),
            0,
        )
        .expect("nonempty scalar window")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn at(&self, k: usize) -> &Vec64 {
        &self.values[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec64> {
        self.values.iter()
    }

    /// Stack the window as a `dim x len` matrix.
    pub fn as_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.dim(), self.len());
        for (k, v) in self.values.iter().enumerate() {
            m.column_mut(k).copy_from(v);
        }
        m
    }

    /// Seeded uniform window on `[-range, range]^dim`.
    pub fn seeded_uniform(dim: usize, len: usize, range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..len)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-range..=range)))
            .collect();
        Self::new(values, 0).expect("nonempty window")
    }
}

/// Offline data matrices over a horizon `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub u0: Mat,
    pub x0: Mat,
    pub x1: Mat,
    pub w0: Mat,
    pub horizon: usize,
    pub pe_certified: bool,
}

impl DataBatch {
    pub fn n_states(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.u0.nrows()
    }

    pub fn w0_rank(&self, rank_tol: f64) -> usize {
        matrix_rank(&self.w0, rank_tol)
    }
}

/// Numerical rank via singular values above `rank_tol * sigma_max`.
pub fn matrix_rank(m: &Mat, rank_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let cutoff = sv.max() * rank_tol;
    if sv.max() == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Moore-Penrose pseudo-inverse by SVD with a relative cutoff.
pub fn pseudo_inverse(m: &Mat) -> Mat {
    let svd = m.clone().svd(true, true);
    let cutoff = PINV_CUTOFF * svd.singular_values.max();
    svd.pseudo_inverse(cutoff).expect("svd computed with both factors")
}

/// Simulate `x(t+1) = A x(t) + B u(t) (+ w(t))` over the input window.
///
/// With a noise bound, disturbances are drawn uniformly from the closed
/// norm ball of that radius by the seeded generator.
pub fn simulate_open_loop(
    sys: &SystemModel,
    x0: &Vec64,
    inputs: &SignalWindow,
    noise_bound: Option<f64>,
    noise_seed: u64,
) -> Result<SignalWindow, SystemError> {
    if x0.len() != sys.n_states() {
        return Err(SystemError::Dimension(format!(
            "initial state has dimension {}, expected {}",
            x0.len(),
            sys.n_states()
        )));
    }
    if inputs.dim() != sys.n_inputs() {
        return Err(SystemError::Dimension(format!(
            "inputs have dimension {}, expected {}",
            inputs.dim(),
            sys.n_inputs()
        )));
    }
    if let Some(w) = noise_bound {
        if w < 0.0 {
            return Err(SystemError::Dimension("noise bound must be nonnegative".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for u in inputs.iter() {
        let mut next = &sys.a * states.last().unwrap() + &sys.b * u;
        if let Some(bound) = noise_bound {
            if bound > 0.0 {
                next += sample_norm_ball(sys.n_states(), bound, &mut rng);
            }
        }
        states.push(next);
    }
    SignalWindow::new(states, inputs.t0)
}

/// Uniform sample from the closed Euclidean ball of the given radius.
fn sample_norm_ball(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut dir = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let norm = dir.norm();
    if norm == 0.0 {
        dir[0] = 1.0;
    } else {
        dir /= norm;
    }
    let u: f64 = rng.random_range(0.0..=1.0);
    dir * (radius * u.powf(1.0 / dim as f64))
}

/// Block Hankel matrix of depth `L`: block row `i`, column `k` holds the
/// signal value at `t0 + i + k`.
pub fn hankel(signal: &SignalWindow, depth: usize) -> Result<Mat, SystemError> {
    let t = signal.len();
    if depth == 0 || depth > t {
        return Err(SystemError::WindowTooShort { len: t, depth });
    }
    let n = signal.dim();
    let cols = t - depth + 1;
    let mut h = Mat::zeros(n * depth, cols);
    for i in 0..depth {
        for k in 0..cols {
            h.view_mut((i * n, k), (n, 1)).copy_from(signal.at(i + k));
        }
    }
    Ok(h)
}

/// Why a persistency-of-excitation check did not pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeVerdict {
    Satisfied,
    RankDeficient { rank: usize, needed: usize },
    /// Window shorter than `(dim + 1) * order - 1`.
    TooShort,
}

impl PeVerdict {
    pub fn is_pe(&self) -> bool {
        matches!(self, PeVerdict::Satisfied)
    }
}

/// Persistency of excitation of the given order: the depth-`order` Hankel
/// matrix must have full row rank.
pub fn is_persistently_exciting(signal: &SignalWindow, order: usize, rank_tol: f64) -> PeVerdict {
    let n = signal.dim();
    let t = signal.len();
    if order == 0 || t + 1 < (n + 1) * order || t < order {
        return PeVerdict::TooShort;
    }
    let h = hankel(signal, order).expect("length checked");
    let needed = n * order;
    let rank = matrix_rank(&h, rank_tol);
    if rank == needed {
        PeVerdict::Satisfied
    } else {
        PeVerdict::RankDeficient { rank, needed }
    }
}

/// Assemble offline data matrices from an input window and the state window
/// it produced (one step longer).
pub fn build_data_batch(
    inputs: &SignalWindow,
    states: &SignalWindow,
) -> Result<DataBatch, SystemError> {
    if states.len() != inputs.len() + 1 {
        return Err(SystemError::Dimension(format!(
            "states length {} must be inputs length {} plus one",
            states.len(),
            inputs.len()
        )));
    }
    let t = inputs.len();
    let n_x = states.dim();
    let n_u = inputs.dim();
    let mut u0 = Mat::zeros(n_u, t);
    let mut x0 = Mat::zeros(n_x, t);
    let mut x1 = Mat::zeros(n_x, t);
    for k in 0..t {
        u0.column_mut(k).copy_from(inputs.at(k));
        x0.column_mut(k).copy_from(states.at(k));
        x1.column_mut(k).copy_from(states.at(k + 1));
    }
    let mut w0 = Mat::zeros(n_x + n_u, t);
    w0.view_mut((0, 0), (n_x, t)).copy_from(&x0);
    w0.view_mut((n_x, 0), (n_u, t)).copy_from(&u0);
    let pe_certified =
        is_persistently_exciting(inputs, n_x + 1, PE_RANK_TOL).is_pe() && matrix_rank(&w0, PE_RANK_TOL) == n_x + n_u;
    Ok(DataBatch {
        u0,
        x0,
        x1,
        w0,
        horizon: t,
        pe_certified,
    })
}

/// Exact data-driven recovery `Z = (X1 W0^+)'` of the stacked system.
pub fn recover_system(batch: &DataBatch) -> Result<Mat, SystemError> {
    let needed = batch.n_states() + batch.n_inputs();
    let rank = batch.w0_rank(PE_RANK_TOL);
    if rank < needed {
        return Err(SystemError::NotIdentifiable { rank, needed });
    }
    Ok((&batch.x1 * pseudo_inverse(&batch.w0)).transpose())
}

/// Write a matrix as CSV: a `rows,cols` header line, then row-major values
/// at 17 significant digits.
pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<(), SystemError> {
    let mut out = String::new();
    out.push_str(&format!("{},{}\n", m.nrows(), m.ncols()));
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<Mat, SystemError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SystemError::Csv("empty file".into()))?;
    let mut parts = header.split(',');
    let rows: usize = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| SystemError::Csv("bad header".into()))?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| SystemError::Csv("bad header".into()))?;
    let mut m = Mat::zeros(rows, cols);
    for (r, line) in lines.take(rows).enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SystemError::Csv(format!("row {r}: {e}")))?;
        if vals.len() != cols {
            return Err(SystemError::Csv(format!(
                "row {r} has {} values, expected {cols}",
                vals.len()
            )));
        }
        for (c, v) in vals.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

/// Write a data batch as one CSV file per matrix under `dir` with the given
/// file-name prefix.
pub fn write_data_batch_csv(dir: &Path, prefix: &str, batch: &DataBatch) -> Result<(), SystemError> {
    std::fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join(format!("{prefix}_U0.csv")), &batch.u0)?;
    write_matrix_csv(&dir.join(format!("{prefix}_X0.csv")), &batch.x0)?;
    write_matrix_csv(&dir.join(format!("{prefix}_X1.csv")), &batch.x1)?;
    write_matrix_csv(&dir.join(format!("{prefix}_W0.csv")), &batch.w0)?;
    Ok(())
}

/// Read a data batch written by [`write_data_batch_csv`].
pub fn read_data_batch_csv(dir: &Path, prefix: &str) -> Result<DataBatch, SystemError> {
    let u0 = read_matrix_csv(&dir.join(format!("{prefix}_U0.csv")))?;
    let x0 = read_matrix_csv(&dir.join(format!("{prefix}_X0.csv")))?;
    let x1 = read_matrix_csv(&dir.join(format!("{prefix}_X1.csv")))?;
    let w0 = read_matrix_csv(&dir.join(format!("{prefix}_W0.csv")))?;
    let horizon = u0.ncols();
    if x0.ncols() != horizon || x1.ncols() != horizon || w0.ncols() != horizon {
        return Err(SystemError::Csv("inconsistent horizons".into()));
    }
    let n_x = x0.nrows();
    let n_u = u0.nrows();
    if w0.nrows() != n_x + n_u {
        return Err(SystemError::Csv("W0 row count mismatch".into()));
    }
    let pe_certified = matrix_rank(&w0, PE_RANK_TOL) == n_x + n_u;
    Ok(DataBatch {
        u0,
        x0,
        x1,
        w0,
        horizon,
        pe_certified,
    })
}
