//! Dense column-major matrices and Householder QR with column pivoting.

use alloc::vec;
use alloc::vec::Vec;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from a row-major closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[j * rows + i] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] += v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate().take(self.cols) {
            if xj != 0.0 {
                axpy(xj, self.col(j), &mut y);
            }
        }
        y
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.data.split_at_mut(hi * self.rows);
        left[lo * self.rows..(lo + 1) * self.rows].swap_with_slice(&mut right[..self.rows]);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm2(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large entries.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let ss: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * libm::sqrt(ss)
}

/// Applies `H = I - tau v v^T` (with `v[0] = 1` implied) to `x`.
#[inline]
fn apply_reflector(v_tail: &[f64], tau: f64, x: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let (head, tail) = x.split_first_mut().expect("non-empty");
    let w = tau * (*head + dot(v_tail, tail));
    *head -= w;
    axpy(-w, v_tail, tail);
}

/// `A P = Q R` computed with Householder reflections, stopping as soon as
/// every remaining column norm is at or below `tol`. The number of completed
/// steps is the numerical rank.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// R on and above the diagonal, reflector tails below it.
    qr: Matrix,
    tau: Vec<f64>,
    /// `perm[k]` is the original column now in position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(mut a: Matrix, tol: f64) -> Self {
        let (m, n) = (a.rows, a.cols);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|j| norm2(a.col(j))).collect();
        let mut ref_norms = norms.clone();
        let mut tau = Vec::with_capacity(m.min(n));
        let recompute_limit = libm::sqrt(f64::EPSILON);

        let mut rank = 0;
        for k in 0..m.min(n) {
            let (p, &best) = norms[k..]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, v)| (i + k, v))
                .expect("k < n");
            if best <= tol {
                break;
            }
            a.swap_cols(k, p);
            perm.swap(k, p);
            norms.swap(k, p);
            ref_norms.swap(k, p);

            // Reflector zeroing a[k+1.., k].
            let col = &mut a.col_mut(k)[k..];
            let alpha = col[0];
            let tail_norm = norm2(&col[1..]);
            let t = if tail_norm == 0.0 {
                0.0
            } else {
                let beta = -libm::copysign(libm::hypot(alpha, tail_norm), alpha);
                let scale = 1.0 / (alpha - beta);
                col[1..].iter_mut().for_each(|v| *v *= scale);
                col[0] = beta;
                (beta - alpha) / beta
            };
            tau.push(t);
            if col[0].abs() <= tol {
                // Pivot norm exceeded tol but the reflected diagonal did not;
                // only reachable through rounding in the norm downdate.
                tau.pop();
                break;
            }
            rank = k + 1;

            let (left, right) = a.data.split_at_mut((k + 1) * m);
            let v_tail = &left[k * m + k + 1..(k + 1) * m];
            for (jj, colj) in right.chunks_exact_mut(m).enumerate() {
                let j = k + 1 + jj;
                apply_reflector(v_tail, t, &mut colj[k..]);
                if norms[j] != 0.0 {
                    let ratio = colj[k].abs() / norms[j];
                    let temp = (1.0 - ratio * ratio).max(0.0);
                    let rel = norms[j] / ref_norms[j];
                    if temp * rel * rel <= recompute_limit {
                        norms[j] = norm2(&colj[k + 1..]);
                        ref_norms[j] = norms[j];
                    } else {
                        norms[j] *= libm::sqrt(temp);
                    }
                }
            }
        }
        Self {
            qr: a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rows(&self) -> usize {
        self.qr.rows
    }

    pub fn cols(&self) -> usize {
        self.qr.cols
    }

    /// `|R[k][k]|` for the completed steps, non-increasing up to rounding.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rank).map(|k| self.qr.get(k, k).abs()).collect()
    }

    /// Overwrites `b` with `Q^T b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        let m = self.qr.rows;
        for (k, &t) in self.tau.iter().enumerate() {
            let v_tail = &self.qr.col(k)[k + 1..m];
            apply_reflector(v_tail, t, &mut b[k..]);
        }
    }

    /// Solves `R11 z = rhs` for the leading `rank x rank` triangle.
    fn back_substitute(&self, rhs: &mut [f64]) {
        for k in (0..self.rank).rev() {
            rhs[k] /= self.qr.get(k, k);
            let zk = rhs[k];
            if zk != 0.0 {
                let col = &self.qr.col(k)[..k];
                axpy(-zk, col, &mut rhs[..k]);
            }
        }
    }

    /// Least-squares solution with the free (non-pivot) variables set to
    /// zero. Unique when `rank == cols`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        self.apply_qt(&mut y);
        y.truncate(self.rank);
        self.back_substitute(&mut y);
        let mut x = vec![0.0; self.qr.cols];
        for (k, v) in y.into_iter().enumerate() {
            x[self.perm[k]] = v;
        }
        x
    }

    /// Orthonormal basis (columns) of the numerical null space, `n x (n - rank)`.
    pub fn null_space(&self) -> Matrix {
        let (n, r) = (self.qr.cols, self.rank);
        let d = n - r;
        if d == 0 {
            return Matrix::zeros(n, 0);
        }
        // Columns P [-R11^{-1} R12; I].
        let mut basis = Matrix::zeros(n, d);
        let mut z = vec![0.0; r];
        for j in 0..d {
            z.copy_from_slice(&self.qr.col(r + j)[..r]);
            self.back_substitute(&mut z);
            let out = basis.col_mut(j);
            for k in 0..r {
                out[self.perm[k]] = -z[k];
            }
            out[self.perm[r + j]] = 1.0;
        }
        orthonormalize(basis)
    }
}

/// Thin Q factor of a full-column-rank matrix.
fn orthonormalize(a: Matrix) -> Matrix {
    let (m, n) = (a.rows, a.cols);
    let qr = PivotedQr::new(a, 0.0);
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        let col = q.col_mut(j);
        col[j] = 1.0;
        for (k, &t) in qr.tau.iter().enumerate().rev() {
            let v_tail = &qr.qr.col(k)[k + 1..m];
            apply_reflector(v_tail, t, &mut col[k..]);
        }
    }
    // Pivoting permutes columns of A only; Q still spans the same space.
    q
}
