//! Implicit-Euler step matrices for the Fokker-Planck and linear HJB
//! equations, and the sparse solvers behind them.
//!
//! `A_FP = I - dt eps Lap - dt div(. Q)` and
//! `A_HJB = I - dt eps Lap + dt Adv(Q)` are transposes of each other for
//! the same split policy. Both are M-matrices; `A_FP` has unit column sums
//! and `A_HJB` unit row sums.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::grid::{GridError, ScalarField, SpaceGrid, StaggeredPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinsysError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error(
        "Krylov solver stopped after {iterations} iterations at relative residual {residual:e}"
    )]
    NotConverged { iterations: usize, residual: f64 },
    #[error("right-hand side of length {found} does not match operator of dimension {expected}")]
    Shape { expected: usize, found: usize },
    #[error("relative tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Square sparse matrix in compressed-row form, columns sorted per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Assembles from triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            rows[r].push((c, v));
        }
        let mut builder = CsrBuilder::with_capacity(n, triplets.len());
        for row in &mut rows {
            builder.push_row(row);
        }
        builder.finish()
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &triplets)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn max_row_nnz(&self) -> usize {
        self.row_ptr
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|(col, _)| *col == c)
            .map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        Self::from_triplets(self.n, &t)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.vals.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (_, c, v) in self.triplets() {
            out[c] += v;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    /// Positive diagonal and nonpositive off-diagonal entries.
    pub fn has_m_matrix_sign_pattern(&self) -> bool {
        self.triplets()
            .iter()
            .all(|&(r, c, v)| if r == c { v > 0.0 } else { v <= 0.0 })
    }

    /// Row `r` couples only to `r` and its periodic neighbors `r +- 1`.
    fn is_periodic_tridiagonal(&self) -> bool {
        let n = self.n;
        n >= 3
            && (0..n).all(|r| {
                self.row(r)
                    .all(|(c, _)| c == r || c == (r + 1) % n || c == (r + n - 1) % n)
            })
    }
}

struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrBuilder {
    fn with_capacity(n: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        Self {
            n,
            row_ptr,
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
        }
    }

    fn push_row(&mut self, entries: &mut [(usize, f64)]) {
        entries.sort_unstable_by_key(|e| e.0);
        let start = self.cols.len();
        for &(c, v) in entries.iter() {
            if self.cols.len() > start && *self.cols.last().unwrap() == c {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    fn finish(self) -> SparseOperator {
        debug_assert_eq!(self.row_ptr.len(), self.n + 1);
        SparseOperator {
            n: self.n,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

fn check_policy(grid: &SpaceGrid, qpm: &StaggeredPolicy) -> Result<(), GridError> {
    if qpm.dim() != grid.dim() {
        return Err(GridError::Dimension(qpm.dim()));
    }
    grid.check(qpm.len())
}

/// `I - dt eps Lap - dt div(. Q_±)`, the forward Fokker-Planck step.
pub fn assemble_fp_matrix(
    grid: &SpaceGrid,
    dt: f64,
    epsilon: f64,
    qpm: &StaggeredPolicy,
) -> Result<SparseOperator, LinsysError> {
    check_policy(grid, qpm)?;
    let h = grid.spacing();
    let diff = dt * epsilon / (h * h);
    let drift = dt / h;
    let mut builder = CsrBuilder::with_capacity(grid.len(), grid.len() * (1 + 2 * grid.dim()));
    let mut row = Vec::with_capacity(1 + 2 * grid.dim());
    for k in 0..grid.len() {
        row.clear();
        let mut diag = 1.0;
        for axis in 0..grid.dim() {
            let next = grid.neighbor(k, axis, 1);
            let prev = grid.neighbor(k, axis, -1);
            diag += 2.0 * diff + drift * (qpm.left(k, axis).max(0.0) - qpm.right(k, axis).min(0.0));
            row.push((next, -diff - drift * qpm.left(next, axis).max(0.0)));
            row.push((prev, -diff + drift * qpm.right(prev, axis).min(0.0)));
        }
        row.push((k, diag));
        builder.push_row(&mut row);
    }
    Ok(builder.finish())
}

/// `I - dt eps Lap + dt Q_± . D`, the backward linear HJB step.
pub fn assemble_hjb_matrix(
    grid: &SpaceGrid,
    dt: f64,
    epsilon: f64,
    qpm: &StaggeredPolicy,
) -> Result<SparseOperator, LinsysError> {
    check_policy(grid, qpm)?;
    let h = grid.spacing();
    let diff = dt * epsilon / (h * h);
    let drift = dt / h;
    let mut builder = CsrBuilder::with_capacity(grid.len(), grid.len() * (1 + 2 * grid.dim()));
    let mut row = Vec::with_capacity(1 + 2 * grid.dim());
    for k in 0..grid.len() {
        row.clear();
        let mut diag = 1.0;
        for axis in 0..grid.dim() {
            let left = qpm.left(k, axis).max(0.0);
            let right = qpm.right(k, axis).min(0.0);
            diag += 2.0 * diff + drift * (left - right);
            row.push((grid.neighbor(k, axis, -1), -diff - drift * left));
            row.push((grid.neighbor(k, axis, 1), -diff + drift * right));
        }
        row.push((k, diag));
        builder.push_row(&mut row);
    }
    Ok(builder.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMethod {
    /// Sparse LU (periodic Thomas elimination for 1D operators).
    Direct,
    /// BiCGSTAB preconditioned with ILU(0).
    Krylov,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveSettings {
    pub method: LinearMethod,
    pub rel_tol: f64,
    pub max_krylov_iters: usize,
}

impl Default for LinearSolveSettings {
    fn default() -> Self {
        Self {
            method: LinearMethod::Direct,
            rel_tol: 1e-12,
            max_krylov_iters: 1000,
        }
    }
}

/// Solves `A x = b`.
pub fn solve(
    a: &SparseOperator,
    b: &[f64],
    settings: &LinearSolveSettings,
) -> Result<ScalarField, LinsysError> {
    if b.len() != a.n {
        return Err(LinsysError::Shape {
            expected: a.n,
            found: b.len(),
        });
    }
    if !(settings.rel_tol > 0.0) {
        return Err(LinsysError::Tolerance(settings.rel_tol));
    }
    let x = match settings.method {
        LinearMethod::Direct if a.is_periodic_tridiagonal() => periodic_tridiagonal(a, b)?,
        LinearMethod::Direct => sparse_lu(a, b)?,
        LinearMethod::Krylov => bicgstab(a, b, settings)?,
    };
    if x.iter().all(|v| v.is_finite()) {
        Ok(x.into())
    } else {
        Err(LinsysError::Singular)
    }
}

fn sparse_lu(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>, LinsysError> {
    let triplets: Vec<Triplet<usize, usize, f64>> = a
        .triplets()
        .into_iter()
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &triplets)
        .map_err(|_| LinsysError::Singular)?;
    let lu = mat.sp_lu().map_err(|_| LinsysError::Singular)?;
    let rhs = faer::Col::<f64>::from_fn(a.n, |i| b[i]);
    let x = lu.solve(&rhs);
    Ok((0..a.n).map(|i| x[i]).collect())
}

/// Thomas elimination on the non-periodic part plus a Sherman-Morrison
/// correction for the two corner entries.
fn periodic_tridiagonal(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>, LinsysError> {
    let n = a.n;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for r in 0..n {
        for (c, v) in a.row(r) {
            if c == r {
                diag[r] += v;
            } else if c == (r + n - 1) % n {
                lower[r] += v;
            } else {
                upper[r] += v;
            }
        }
    }
    let corner_top = lower[0];
    let corner_bottom = upper[n - 1];
    let gamma = -diag[0];
    if gamma == 0.0 {
        return Err(LinsysError::Singular);
    }
    let mut bb = diag.clone();
    bb[0] -= gamma;
    bb[n - 1] -= corner_bottom * corner_top / gamma;

    let mut x = thomas(&lower, &bb, &upper, b)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = corner_bottom;
    let z = thomas(&lower, &bb, &upper, &u)?;
    let denom = 1.0 + z[0] + corner_top * z[n - 1] / gamma;
    if denom == 0.0 {
        return Err(LinsysError::Singular);
    }
    let fact = (x[0] + corner_top * x[n - 1] / gamma) / denom;
    for (xi, zi) in x.iter_mut().zip(&z) {
        *xi -= fact * zi;
    }
    Ok(x)
}

fn thomas(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, LinsysError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(LinsysError::Singular);
    }
    c[0] = upper[0] / pivot;
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 {
            return Err(LinsysError::Singular);
        }
        c[i] = upper[i] / pivot;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Incomplete LU with the sparsity of `A`, stored in one CSR array.
struct Ilu0 {
    a: SparseOperator,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &SparseOperator) -> Result<Self, LinsysError> {
        let mut f = a.clone();
        let n = f.n;
        let mut diag_pos = vec![usize::MAX; n];
        #[allow(clippy::needless_range_loop)]
        for r in 0..n {
            for p in f.row_ptr[r]..f.row_ptr[r + 1] {
                if f.cols[p] == r {
                    diag_pos[r] = p;
                }
            }
            if diag_pos[r] == usize::MAX {
                return Err(LinsysError::Singular);
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let span = f.row_ptr[i]..f.row_ptr[i + 1];
            for p in span.clone() {
                pos[f.cols[p]] = p;
            }
            for p in span.clone() {
                let k = f.cols[p];
                if k >= i {
                    break;
                }
                let pivot = f.vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(LinsysError::Singular);
                }
                let lik = f.vals[p] / pivot;
                f.vals[p] = lik;
                for q in diag_pos[k] + 1..f.row_ptr[k + 1] {
                    let j = f.cols[q];
                    if pos[j] != usize::MAX {
                        f.vals[pos[j]] -= lik * f.vals[q];
                    }
                }
            }
            for p in span {
                pos[f.cols[p]] = usize::MAX;
            }
        }
        Ok(Self { a: f, diag_pos })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let f = &self.a;
        let n = f.n;
        let mut y = r.to_vec();
        for i in 0..n {
            for p in f.row_ptr[i]..self.diag_pos[i] {
                y[i] -= f.vals[p] * y[f.cols[p]];
            }
        }
        for i in (0..n).rev() {
            for p in self.diag_pos[i] + 1..f.row_ptr[i + 1] {
                y[i] -= f.vals[p] * y[f.cols[p]];
            }
            y[i] /= f.vals[self.diag_pos[i]];
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn bicgstab(
    a: &SparseOperator,
    b: &[f64],
    settings: &LinearSolveSettings,
) -> Result<Vec<f64>, LinsysError> {
    let n = a.n;
    let b_norm = norm_inf(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = settings.rel_tol * b_norm;
    let pre = Ilu0::new(a)?;
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut residual = b_norm;
    for it in 0..settings.max_krylov_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(LinsysError::NotConverged {
                iterations: it,
                residual: residual / b_norm,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = pre.apply(&p);
        v = a.apply(&p_hat);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let s_hat = pre.apply(&s);
        let t = a.apply(&s_hat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        // recompute the true residual to avoid drift in the recurrence
        let ax = a.apply(&x);
        residual = norm_inf(
            &b.iter()
                .zip(&ax)
                .map(|(bi, ai)| bi - ai)
                .collect::<Vec<_>>(),
        );
        if residual <= target {
            return Ok(x);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(LinsysError::NotConverged {
        iterations: settings.max_krylov_iters,
        residual: residual / b_norm,
    })
}
