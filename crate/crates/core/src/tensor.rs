//! Dense row-major `f64` tensors and the forward primitives built on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn expect_shape(&self, context: &'static str, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                context,
                expected: expected.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Geometry of a square 2-D convolution over square inputs with symmetric
/// zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_size: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        in_size: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let geom = Self {
            in_channels,
            in_size,
            filters,
            kernel,
            stride,
            padding,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidGeometry(msg));
        if self.in_channels == 0 || self.in_size == 0 || self.filters == 0 {
            return bad(format!("zero-sized dimension in {self:?}"));
        }
        if self.kernel == 0 || self.stride == 0 {
            return bad(format!("kernel and stride must be positive in {self:?}"));
        }
        let span = self.in_size + 2 * self.padding;
        if self.kernel > span {
            return bad(format!(
                "kernel {} larger than padded input {}",
                self.kernel, span
            ));
        }
        if !(span - self.kernel).is_multiple_of(self.stride) {
            return bad(format!(
                "(H + 2P - K) = {} is not divisible by stride {}",
                span - self.kernel,
                self.stride
            ));
        }
        Ok(())
    }

    pub fn out_size(&self) -> usize {
        (self.in_size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.in_size, self.in_size]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.filters, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let o = self.out_size();
        [self.filters, o, o]
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_size * self.in_size
    }

    pub fn weight_len(&self) -> usize {
        self.filters * self.in_channels * self.kernel * self.kernel
    }

    pub fn output_len(&self) -> usize {
        let o = self.out_size();
        self.filters * o * o
    }

    /// Input coordinate touched by output position `out` at kernel offset
    /// `k`, or `None` when it falls in the zero padding.
    #[inline]
    pub fn input_coord(&self, out: usize, k: usize) -> Option<usize> {
        let p = out * self.stride + k;
        if p < self.padding || p >= self.padding + self.in_size {
            None
        } else {
            Some(p - self.padding)
        }
    }
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    geom.validate()?;
    input.expect_shape("conv2d input", &geom.input_shape())?;
    weights.expect_shape("conv2d weights", &geom.weight_shape())?;
    if let Some(b) = bias {
        b.expect_shape("conv2d bias", &[geom.filters])?;
    }
    let (n_ch, h, k) = (geom.in_channels, geom.in_size, geom.kernel);
    let o = geom.out_size();
    let x = input.data();
    let w = weights.data();
    let mut out = vec![0.0; geom.output_len()];
    for f in 0..geom.filters {
        let b = bias.map_or(0.0, |b| b.data()[f]);
        for oi in 0..o {
            for oj in 0..o {
                let mut acc = b;
                for c in 0..n_ch {
                    for ki in 0..k {
                        let Some(y) = geom.input_coord(oi, ki) else {
                            continue;
                        };
                        let x_row = (c * h + y) * h;
                        let w_row = ((f * n_ch + c) * k + ki) * k;
                        for kj in 0..k {
                            if let Some(xc) = geom.input_coord(oj, kj) {
                                acc += w[w_row + kj] * x[x_row + xc];
                            }
                        }
                    }
                }
                out[(f * o + oi) * o + oj] = acc;
            }
        }
    }
    Tensor::new(geom.output_shape().to_vec(), out)
}

/// `z = W x + b` with `W` stored as `[out_features, in_features]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [c, i] = match *weights.shape() {
        [c, i] => [c, i],
        _ => {
            return Err(Error::ShapeMismatch {
                context: "dense weights",
                expected: vec![bias.len(), input.len()],
                found: weights.shape().to_vec(),
            })
        }
    };
    input.expect_shape("dense input", &[i])?;
    bias.expect_shape("dense bias", &[c])?;
    let x = input.data();
    let z = weights
        .data()
        .chunks_exact(i)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect();
    Ok(Tensor::vector(z))
}
