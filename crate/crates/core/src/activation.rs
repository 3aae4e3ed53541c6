//! The eight supported activations, their derivatives written in terms of the
//! activation output, and (partial) inversion.

use core::f64::consts::FRAC_PI_2;
use core::fmt;
use core::str::FromStr;

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    ArcTan,
    SoftPlus,
    Relu,
    LeakyRelu,
    /// Parametric ReLU with negative slope `alpha > 0`.
    PRelu(f64),
    /// ELU with saturation `alpha > 0`.
    Elu(f64),
}

impl Activation {
    pub const KINDS: [&'static str; 8] = [
        "sigmoid",
        "tanh",
        "arctan",
        "softplus",
        "relu",
        "leaky_relu",
        "prelu",
        "elu",
    ];

    /// Builds an activation from its kind name and optional alpha. Alpha is
    /// required for `prelu` and `elu` and ignored otherwise.
    pub fn from_kind(kind: &str, alpha: Option<f64>) -> Result<Self> {
        let with_alpha = |name: &'static str, make: fn(f64) -> Self| match alpha {
            None => Err(Error::MissingAlpha(name)),
            Some(a) if a > 0.0 && a.is_finite() => Ok(make(a)),
            Some(a) => Err(Error::InvalidAlpha { kind: name, alpha: a }),
        };
        Ok(match kind {
            "sigmoid" => Self::Sigmoid,
            "tanh" => Self::Tanh,
            "arctan" => Self::ArcTan,
            "softplus" => Self::SoftPlus,
            "relu" => Self::Relu,
            "leaky_relu" => Self::LeakyRelu,
            "prelu" => return with_alpha("prelu", Self::PRelu),
            "elu" => return with_alpha("elu", Self::Elu),
            other => return Err(Error::UnknownActivation(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::ArcTan => "arctan",
            Self::SoftPlus => "softplus",
            Self::Relu => "relu",
            Self::LeakyRelu => "leaky_relu",
            Self::PRelu(_) => "prelu",
            Self::Elu(_) => "elu",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Self::PRelu(a) | Self::Elu(a) => Some(a),
            _ => None,
        }
    }

    /// Whether every output can be mapped back to its input. ReLU is only
    /// partially invertible.
    pub fn is_invertible(&self) -> bool {
        !matches!(self, Self::Relu)
    }

    pub fn apply_scalar(&self, o: f64) -> f64 {
        match *self {
            Self::Sigmoid => {
                if o >= 0.0 {
                    1.0 / (1.0 + libm::exp(-o))
                } else {
                    let e = libm::exp(o);
                    e / (1.0 + e)
                }
            }
            Self::Tanh => libm::tanh(o),
            Self::ArcTan => libm::atan(o),
            Self::SoftPlus => o.max(0.0) + libm::log1p(libm::exp(-o.abs())),
            Self::Relu => {
                if o > 0.0 {
                    o
                } else {
                    0.0
                }
            }
            Self::LeakyRelu => {
                if o >= 0.0 {
                    o
                } else {
                    LEAKY_SLOPE * o
                }
            }
            Self::PRelu(a) => {
                if o >= 0.0 {
                    o
                } else {
                    a * o
                }
            }
            Self::Elu(a) => {
                if o >= 0.0 {
                    o
                } else {
                    a * libm::expm1(o)
                }
            }
        }
    }

    /// True derivative `A'(o)` at the pre-activation. Used by the honest
    /// client's backward pass; the attack never calls this.
    pub fn derivative_at_input(&self, o: f64) -> f64 {
        match *self {
            Self::Sigmoid => {
                let s = self.apply_scalar(o);
                s * (1.0 - s)
            }
            Self::Tanh => {
                let t = libm::tanh(o);
                1.0 - t * t
            }
            Self::ArcTan => 1.0 / (1.0 + o * o),
            Self::SoftPlus => Self::Sigmoid.apply_scalar(o),
            Self::Relu => {
                if o > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu => {
                if o >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Self::PRelu(a) => {
                if o >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Self::Elu(a) => {
                if o >= 0.0 {
                    1.0
                } else {
                    a * libm::exp(o)
                }
            }
        }
    }

    fn invalid(&self, value: f64) -> Error {
        Error::InvalidActivationOutput {
            kind: self.name(),
            value,
        }
    }

    /// `A'(o)` expressed through the output `x = A(o)` only.
    ///
    /// Boundary outputs that floating point can produce through saturation
    /// (e.g. `sigmoid(40) == 1.0`) are accepted; anything outside the closed
    /// range is rejected.
    pub fn derivative_from_output_scalar(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(self.invalid(x));
        }
        match *self {
            Self::Sigmoid => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(self.invalid(x));
                }
                Ok(x * (1.0 - x))
            }
            Self::Tanh => {
                if !(-1.0..=1.0).contains(&x) {
                    return Err(self.invalid(x));
                }
                Ok(1.0 - x * x)
            }
            Self::ArcTan => {
                if x.abs() > FRAC_PI_2 {
                    return Err(self.invalid(x));
                }
                let t = libm::tan(x);
                Ok(1.0 / (1.0 + t * t))
            }
            Self::SoftPlus => {
                if x < 0.0 {
                    return Err(self.invalid(x));
                }
                Ok(-libm::expm1(-x))
            }
            Self::Relu => {
                if x < 0.0 {
                    Err(self.invalid(x))
                } else if x > 0.0 {
                    Ok(1.0)
                } else {
                    Ok(0.0)
                }
            }
            Self::LeakyRelu => Ok(if x >= 0.0 { 1.0 } else { LEAKY_SLOPE }),
            Self::PRelu(a) => Ok(if x >= 0.0 { 1.0 } else { a }),
            Self::Elu(a) => {
                if x < -a {
                    Err(self.invalid(x))
                } else if x >= 0.0 {
                    Ok(1.0)
                } else {
                    Ok(x + a)
                }
            }
        }
    }

    /// Recovers the pre-activation from an output. `Ok(None)` marks an output
    /// that is valid but carries no information about its input (ReLU zeros,
    /// saturated boundary values).
    pub fn invert_scalar(&self, x: f64) -> Result<Option<f64>> {
        // Domain check shared with the derivative.
        self.derivative_from_output_scalar(x)?;
        Ok(match *self {
            Self::Sigmoid => (x > 0.0 && x < 1.0).then(|| libm::log(x) - libm::log1p(-x)),
            Self::Tanh => (x.abs() < 1.0).then(|| libm::atanh(x)),
            Self::ArcTan => (x.abs() < FRAC_PI_2).then(|| libm::tan(x)),
            Self::SoftPlus => (x > 0.0).then(|| {
                if x > 1.0 {
                    x + libm::log1p(-libm::exp(-x))
                } else {
                    libm::log(libm::expm1(x))
                }
            }),
            Self::Relu => (x > 0.0).then_some(x),
            Self::LeakyRelu => Some(if x >= 0.0 { x } else { x / LEAKY_SLOPE }),
            Self::PRelu(a) => Some(if x >= 0.0 { x } else { x / a }),
            Self::Elu(a) => {
                if x >= 0.0 {
                    Some(x)
                } else {
                    (x > -a).then(|| libm::log1p(x / a))
                }
            }
        })
    }

    pub fn apply(&self, input: &Tensor) -> Tensor {
        input.map(|o| self.apply_scalar(o))
    }

    pub fn derivative_from_output(&self, output: &Tensor) -> Result<Tensor> {
        let data = output
            .data()
            .iter()
            .map(|&x| self.derivative_from_output_scalar(x))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(output.shape().to_vec(), data)
    }

    /// `dO = dX ⊙ A'(O)` with `A'` evaluated from the output `X`.
    pub fn propagate_gradient(&self, d_output: &Tensor, output: &Tensor) -> Result<Tensor> {
        d_output.expect_shape("activation gradient", output.shape())?;
        let data = d_output
            .data()
            .iter()
            .zip(output.data())
            .map(|(&g, &x)| Ok(g * self.derivative_from_output_scalar(x)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(output.shape().to_vec(), data)
    }

    /// Pre-activation values and a mask of which of them were recoverable.
    /// Unknown entries are filled with zero.
    pub fn invert_partial(&self, output: &Tensor) -> Result<(Tensor, Vec<bool>)> {
        let mut known = Vec::with_capacity(output.len());
        let mut data = Vec::with_capacity(output.len());
        for &x in output.data() {
            let o = self.invert_scalar(x)?;
            known.push(o.is_some());
            data.push(o.unwrap_or(0.0));
        }
        Ok((Tensor::new(output.shape().to_vec(), data)?, known))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha() {
            Some(a) => write!(f, "{}(alpha={a})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Parses kinds that need no alpha.
    fn from_str(s: &str) -> Result<Self> {
        Self::from_kind(s, None)
    }
}
