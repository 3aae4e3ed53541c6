//! Least-squares solve of the stacked weight/gradient system.
//!
//! Gradient rows touch one input channel each, and with stride `S` only one
//! of the `S^2` stride phases of that channel, so they split into many small
//! independent blocks. Each block is factored on its own with pivoted QR.
//! Whatever the gradient rows leave undetermined (the union of the blocks'
//! null spaces) is then resolved from the weight rows projected onto that
//! null space, again with pivoted QR. The stacked rank is
//! `rank(G) + rank(W N)` where the columns of `N` span `null(G)`.

use alloc::vec;
use alloc::vec::Vec;

use super::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, PivotedQr};

/// Rank threshold relative to the largest absolute matrix entry.
pub const DEFAULT_RANK_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSolution {
    pub x: Vec<f64>,
    pub rank: usize,
    /// `||M x - rhs||_2` over every stacked row.
    pub residual: f64,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

struct Block {
    members: Vec<usize>,
    rows: Vec<usize>,
    /// Orthonormal null-space basis (`members.len()` rows) and its column
    /// offset in the combined null space.
    null: Option<(Matrix, usize)>,
}

struct Analysis {
    rank: usize,
    x: Option<Vec<f64>>,
}

fn check_sizes(gradient: &ConstraintSet, weight: &ConstraintSet, n: usize) -> Result<()> {
    for set in [gradient, weight] {
        if set.n_unknowns != n {
            return Err(Error::ShapeMismatch {
                context: "constraint set",
                expected: vec![n],
                found: vec![set.n_unknowns],
            });
        }
        if let Some(&bad) = set.rows.iter().flat_map(|r| &r.cols).find(|&&c| c >= n) {
            return Err(Error::ShapeMismatch {
                context: "constraint column",
                expected: vec![n],
                found: vec![bad],
            });
        }
    }
    if gradient.is_empty() && weight.is_empty() {
        return Err(Error::EmptySystem);
    }
    Ok(())
}

fn analyze(gradient: &ConstraintSet, weight: &ConstraintSet, n: usize, rank_eps: f64, want_x: bool) -> Result<Analysis> {
    check_sizes(gradient, weight, n)?;
    let scale = gradient.max_abs().max(weight.max_abs());
    if scale == 0.0 {
        return Ok(Analysis {
            rank: 0,
            x: (n == 0).then(Vec::new),
        });
    }
    let tol = rank_eps * scale;

    let mut uf = UnionFind::new(n);
    for row in &gradient.rows {
        if let Some((&first, rest)) = row.cols.split_first() {
            rest.iter().for_each(|&c| uf.union(first, c));
        }
    }
    let mut block_of = vec![usize::MAX; n];
    let mut local = vec![0usize; n];
    let mut blocks: Vec<Block> = Vec::new();
    for j in 0..n {
        let root = uf.find(j);
        if block_of[root] == usize::MAX {
            block_of[root] = blocks.len();
            blocks.push(Block {
                members: Vec::new(),
                rows: Vec::new(),
                null: None,
            });
        }
        let b = block_of[root];
        block_of[j] = b;
        local[j] = blocks[b].members.len();
        blocks[b].members.push(j);
    }
    for (i, row) in gradient.rows.iter().enumerate() {
        if let Some(&c) = row.cols.first() {
            blocks[block_of[c]].rows.push(i);
        }
    }

    let mut x = vec![0.0; n];
    let mut rank = 0;
    let mut null_dim = 0;
    for block in &mut blocks {
        let nb = block.members.len();
        if block.rows.is_empty() {
            let eye = Matrix::from_fn(nb, nb, |i, j| if i == j { 1.0 } else { 0.0 });
            block.null = Some((eye, null_dim));
            null_dim += nb;
            continue;
        }
        let mut a = Matrix::zeros(block.rows.len(), nb);
        let mut rhs = Vec::with_capacity(block.rows.len());
        for (bi, &ri) in block.rows.iter().enumerate() {
            let row = &gradient.rows[ri];
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                a.add(bi, local[c], v);
            }
            rhs.push(row.rhs);
        }
        let qr = PivotedQr::new(a, tol);
        rank += qr.rank();
        for (&g, v) in block.members.iter().zip(qr.solve(&rhs)) {
            x[g] = v;
        }
        if qr.rank() < nb {
            block.null = Some((qr.null_space(), null_dim));
            null_dim += nb - qr.rank();
        }
    }

    if null_dim > 0 && !weight.is_empty() {
        let m = weight.len();
        let mut wn = Matrix::zeros(m, null_dim);
        let mut rhs = Vec::with_capacity(m);
        for (i, row) in weight.rows.iter().enumerate() {
            rhs.push(row.rhs - row.eval(&x));
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                if let Some((basis, off)) = &blocks[block_of[c]].null {
                    for t in 0..basis.cols() {
                        wn.add(i, off + t, v * basis.get(local[c], t));
                    }
                }
            }
        }
        let qr = PivotedQr::new(wn, tol);
        rank += qr.rank();
        if want_x && rank == n {
            let z = qr.solve(&rhs);
            for block in &blocks {
                if let Some((basis, off)) = &block.null {
                    let zb = &z[*off..off + basis.cols()];
                    for (li, &g) in block.members.iter().enumerate() {
                        x[g] += (0..basis.cols()).map(|t| basis.get(li, t) * zb[t]).sum::<f64>();
                    }
                }
            }
        }
    }

    Ok(Analysis {
        rank,
        x: (want_x && rank == n).then_some(x),
    })
}

/// Numerical rank of the stacked `[weight; gradient]` matrix.
pub fn stacked_rank(gradient: &ConstraintSet, weight: &ConstraintSet, n_unknowns: usize, rank_eps: f64) -> Result<usize> {
    analyze(gradient, weight, n_unknowns, rank_eps, false).map(|a| a.rank)
}

/// Least-squares solution of the stacked system, or
/// [`Error::RankDeficient`] when the rows do not pin down every unknown.
pub fn solve_layer_input(
    gradient: &ConstraintSet,
    weight: &ConstraintSet,
    n_unknowns: usize,
    rank_eps: f64,
) -> Result<LayerSolution> {
    let analysis = analyze(gradient, weight, n_unknowns, rank_eps, true)?;
    let Some(x) = analysis.x else {
        return Err(Error::RankDeficient {
            layer: None,
            rank: analysis.rank,
            unknowns: n_unknowns,
        });
    };
    let residual = libm::sqrt(gradient.residual_sq(&x) + weight.residual_sq(&x));
    Ok(LayerSolution {
        x,
        rank: analysis.rank,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::constraints::SparseRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_set(n: usize, rows: &[Vec<f64>], rhs: &[f64]) -> ConstraintSet {
        ConstraintSet {
            n_unknowns: n,
            rows: rows
                .iter()
                .zip(rhs)
                .map(|(r, &b)| {
                    let (cols, vals) = r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).unzip();
                    SparseRow { cols, vals, rhs: b }
                })
                .collect(),
        }
    }

    #[test]
    fn identity_system() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let b = [3.0, -1.0, 0.5, 2.0, 7.0];
        let sol = solve_layer_input(&dense_set(5, &rows, &b), &ConstraintSet::empty(5), 5, DEFAULT_RANK_EPS).unwrap();
        assert_eq!(sol.x, b.to_vec());
        assert_eq!(sol.rank, 5);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn empty_system_is_an_error() {
        let e = ConstraintSet::empty(3);
        assert_eq!(solve_layer_input(&e, &e, 3, DEFAULT_RANK_EPS).unwrap_err(), Error::EmptySystem);
    }

    #[test]
    fn underdetermined_reports_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let set = dense_set(9, &rows, &[1.0; 4]);
        assert_eq!(
            solve_layer_input(&set, &ConstraintSet::empty(9), 9, DEFAULT_RANK_EPS).unwrap_err(),
            Error::RankDeficient { layer: None, rank: 4, unknowns: 9 }
        );
    }

    #[test]
    fn weight_rows_fill_gradient_null_space() {
        // Gradient rows fix x0 + x1 and x2; weight rows fix x0 - x1 and x3.
        let n = 4;
        let x_true = [1.5, -2.0, 0.25, 4.0];
        let g = dense_set(n, &[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 0.0]], &[-0.5, 0.5]);
        let w = dense_set(n, &[vec![1.0, -1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 3.0]], &[3.5, 12.0]);
        assert_eq!(stacked_rank(&g, &ConstraintSet::empty(n), n, DEFAULT_RANK_EPS).unwrap(), 2);
        let sol = solve_layer_input(&g, &w, n, DEFAULT_RANK_EPS).unwrap();
        assert_eq!(sol.rank, 4);
        for (a, b) in sol.x.iter().zip(x_true) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn matches_dense_qr_on_random_consistent_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..40 {
            let n = rng.gen_range(2..12);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // sparse gradient rows touching random small subsets
            let mk = |count: usize, width: usize, rng: &mut ChaCha8Rng| {
                let rows: Vec<Vec<f64>> = (0..count)
                    .map(|_| {
                        let mut r = vec![0.0; n];
                        for _ in 0..width {
                            r[rng.gen_range(0..n)] = rng.gen_range(-1.0..1.0);
                        }
                        r
                    })
                    .collect();
                let rhs: Vec<f64> = rows.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
                (rows, rhs)
            };
            let (gr, gb) = mk(rng.gen_range(0..n + 3), 2, &mut rng);
            let (wr, wb) = mk(rng.gen_range(1..n + 3), 3, &mut rng);
            let g = dense_set(n, &gr, &gb);
            let w = dense_set(n, &wr, &wb);

            let all: Vec<Vec<f64>> = gr.iter().chain(&wr).cloned().collect();
            let stacked = Matrix::from_fn(all.len(), n, |i, j| all[i][j]);
            let tol = DEFAULT_RANK_EPS * stacked.max_abs();
            let dense_rank = PivotedQr::new(stacked, tol).rank();
            assert_eq!(stacked_rank(&g, &w, n, DEFAULT_RANK_EPS).unwrap(), dense_rank, "trial {trial}");
            match solve_layer_input(&g, &w, n, DEFAULT_RANK_EPS) {
                Ok(sol) => {
                    assert_eq!(dense_rank, n);
                    for (a, b) in sol.x.iter().zip(&x) {
                        assert!((a - b).abs() < 1e-8, "trial {trial}");
                    }
                }
                Err(Error::RankDeficient { rank, .. }) => assert_eq!(rank, dense_rank),
                Err(e) => panic!("{e}"),
            }
        }
    }
}
