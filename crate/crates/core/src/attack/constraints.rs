use alloc::vec::Vec;

use super::maps::ContributionMaps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One linear equation `sum vals[i] * x[cols[i]] = rhs` over the layer input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, v)| v * x[c]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rows over `n_unknowns` unknowns, ordered `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    pub n_unknowns: usize,
    pub rows: Vec<SparseRow>,
}

impl ConstraintSet {
    pub fn empty(n_unknowns: usize) -> Self {
        Self {
            n_unknowns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.max_abs()))
    }

    /// `max |row(x) - rhs|` over all rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max((r.eval(x) - r.rhs).abs()))
    }

    pub fn residual_sq(&self, x: &[f64]) -> f64 {
        self.rows.iter().map(|r| {
            let d = r.eval(x) - r.rhs;
            d * d
        })
        .sum()
    }
}

/// One row per weight entry `(f, c, ki, kj)`:
/// `sum over outputs o of dO[f, o] * X[c, r(o)] = dW[f, c, ki, kj]`.
///
/// Padding contributes nothing and zero `dO` entries are dropped, so a row
/// may end up empty; it is kept so the row count is always `K^2 N F`.
pub fn build_gradient_constraints(d_out: &Tensor, d_weights: &Tensor, maps: &ContributionMaps) -> Result<ConstraintSet> {
    let geom = maps.geometry();
    d_out.expect_shape("conv output gradient", &geom.output_shape())?;
    d_weights.expect_shape("conv weight gradient", &geom.weight_shape())?;
    let g = d_out.data();
    let rows = d_weights
        .data()
        .iter()
        .enumerate()
        .map(|(wi, &rhs)| {
            let mut row = SparseRow {
                rhs,
                ..Default::default()
            };
            for &(out, input) in maps.inputs_of_weight(wi) {
                if let (Some(i), coef) = (input, g[out]) {
                    if coef != 0.0 {
                        row.cols.push(i);
                        row.vals.push(coef);
                    }
                }
            }
            row
        })
        .collect();
    Ok(ConstraintSet {
        n_unknowns: geom.input_len(),
        rows,
    })
}

/// One row per known pre-activation `O[f, oi, oj]`:
/// `sum W[f, c, ki, kj] * X[c, patch] = O[f, oi, oj] - b[f]`.
pub fn build_weight_constraints(
    pre_activation: &Tensor,
    known: &[bool],
    weights: &Tensor,
    bias: Option<&Tensor>,
    maps: &ContributionMaps,
) -> Result<ConstraintSet> {
    let geom = maps.geometry();
    pre_activation.expect_shape("conv pre-activation", &geom.output_shape())?;
    weights.expect_shape("conv weights", &geom.weight_shape())?;
    if known.len() != pre_activation.len() {
        return Err(Error::ShapeMismatch {
            context: "known-output mask",
            expected: alloc::vec![pre_activation.len()],
            found: alloc::vec![known.len()],
        });
    }
    if let Some(b) = bias {
        b.expect_shape("conv bias", &[geom.filters])?;
    }
    let (n_ch, h, k, o) = (geom.in_channels, geom.in_size, geom.kernel, geom.out_size());
    let w = weights.data();
    let mut rows = Vec::new();
    for f in 0..geom.filters {
        let b = bias.map_or(0.0, |b| b.data()[f]);
        for oi in 0..o {
            for oj in 0..o {
                let out = (f * o + oi) * o + oj;
                if !known[out] {
                    continue;
                }
                let mut row = SparseRow {
                    rhs: pre_activation.data()[out] - b,
                    ..Default::default()
                };
                for c in 0..n_ch {
                    for ki in 0..k {
                        let Some(y) = geom.input_coord(oi, ki) else { continue };
                        for kj in 0..k {
                            let Some(x) = geom.input_coord(oj, kj) else { continue };
                            row.cols.push((c * h + y) * h + x);
                            row.vals.push(w[((f * n_ch + c) * k + ki) * k + kj]);
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(ConstraintSet {
        n_unknowns: geom.input_len(),
        rows,
    })
}
