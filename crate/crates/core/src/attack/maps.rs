use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::{ConvGeometry, Tensor};

/// Index lists recording, for one convolution geometry, which outputs every
/// input pixel reaches (and through which weight), and which input pixels
/// every weight multiplies (and into which output).
///
/// All indices are flat row-major offsets into the input `[N,H,H]`, weight
/// `[F,N,K,K]` and output `[F,O,O]` tensors.
#[derive(Debug, Clone)]
pub struct ContributionMaps {
    geom: ConvGeometry,
    input_offsets: Vec<usize>,
    /// `(output, weight)` pairs, grouped by input pixel.
    by_input: Vec<(usize, usize)>,
    /// `(output, input)` pairs, grouped by weight; `outputs_per_weight`
    /// entries each. `None` marks a zero-padding contributor.
    by_weight: Vec<(usize, Option<usize>)>,
    outputs_per_weight: usize,
}

impl ContributionMaps {
    /// Enumerates the sliding-window forward pass once.
    pub fn new(geom: &ConvGeometry) -> Self {
        let (n_ch, h, k, o) = (geom.in_channels, geom.in_size, geom.kernel, geom.out_size());
        let per_weight = o * o;
        let mut by_weight = Vec::with_capacity(geom.weight_len() * per_weight);
        let mut counts = vec![0usize; geom.input_len()];
        for f in 0..geom.filters {
            for c in 0..n_ch {
                for ki in 0..k {
                    for kj in 0..k {
                        for oi in 0..o {
                            let y = geom.input_coord(oi, ki);
                            for oj in 0..o {
                                let out = (f * o + oi) * o + oj;
                                let input = match (y, geom.input_coord(oj, kj)) {
                                    (Some(y), Some(x)) => Some((c * h + y) * h + x),
                                    _ => None,
                                };
                                if let Some(i) = input {
                                    counts[i] += 1;
                                }
                                by_weight.push((out, input));
                            }
                        }
                    }
                }
            }
        }

        let mut input_offsets = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0;
        input_offsets.push(0);
        for &c in &counts {
            acc += c;
            input_offsets.push(acc);
        }
        let mut cursor = input_offsets.clone();
        let mut by_input = vec![(0, 0); acc];
        for (idx, &(out, input)) in by_weight.iter().enumerate() {
            if let Some(i) = input {
                by_input[cursor[i]] = (out, idx / per_weight);
                cursor[i] += 1;
            }
        }
        Self {
            geom: *geom,
            input_offsets,
            by_input,
            by_weight,
            outputs_per_weight: per_weight,
        }
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }

    /// `(output index, weight index)` pairs input pixel `input` contributes through.
    pub fn outputs_of_input(&self, input: usize) -> &[(usize, usize)] {
        &self.by_input[self.input_offsets[input]..self.input_offsets[input + 1]]
    }

    /// `(output index, input index)` pairs weight `weight` takes part in.
    pub fn inputs_of_weight(&self, weight: usize) -> &[(usize, Option<usize>)] {
        let s = weight * self.outputs_per_weight;
        &self.by_weight[s..s + self.outputs_per_weight]
    }
}

/// `dX[n] = sum over (v, t) of dO[v] * W[t]`, summed over every output and
/// filter pixel `n` reaches.
pub fn conv_input_gradient(d_out: &Tensor, weights: &Tensor, maps: &ContributionMaps) -> Result<Tensor> {
    let geom = maps.geometry();
    d_out.expect_shape("conv output gradient", &geom.output_shape())?;
    weights.expect_shape("conv weights", &geom.weight_shape())?;
    let (g, w) = (d_out.data(), weights.data());
    let dx = (0..geom.input_len())
        .map(|n| maps.outputs_of_input(n).iter().map(|&(v, t)| g[v] * w[t]).sum())
        .collect();
    Tensor::new(geom.input_shape().to_vec(), dx)
}
