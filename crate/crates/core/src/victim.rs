//! The honest client: one forward pass and exact backpropagation on a single
//! labelled sample, producing the gradients the attacker observes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, GradientBundle, LayerParams, LayerSpec, ParameterSet};
use crate::tensor::{conv2d_forward, dense_forward, ConvGeometry, Tensor};

/// Every intermediate of a forward pass. `inputs[l]` feeds layer `l` and
/// `outputs[l]` is what it produced; `outputs.last()` are the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
    pub loss: Option<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("trace of a validated architecture is never empty")
    }

    /// Computes and records the cross-entropy loss for `label`; returns the
    /// gradient w.r.t. the logits.
    pub fn attach_label(&mut self, label: usize) -> Result<Tensor> {
        let (loss, dlogits) = softmax_cross_entropy(self.logits(), label)?;
        self.loss = Some(loss);
        Ok(dlogits)
    }
}

fn single_sample(arch: &ArchitectureSpec, input: &Tensor) -> Result<Tensor> {
    let expected = arch.input_shape();
    match input.shape() {
        [1, rest @ ..] if rest == expected => input.clone().reshape(&expected),
        [b, rest @ ..] if rest == expected => Err(Error::BatchNotSupported(*b)),
        _ => {
            input.expect_shape("network input", &expected)?;
            Ok(input.clone())
        }
    }
}

fn layer_forward(spec: &LayerSpec, params: Option<&LayerParams>, x: &Tensor, out_shape: &[usize]) -> Result<Tensor> {
    match spec {
        LayerSpec::Conv { geom, .. } => {
            let p = params.expect("conv layer has parameters");
            conv2d_forward(x, &p.weights, p.bias.as_ref(), geom)
        }
        LayerSpec::Activation(a) => Ok(a.apply(x)),
        LayerSpec::Flatten => x.clone().reshape(out_shape),
        LayerSpec::Dense { .. } => {
            let p = params.expect("dense layer has parameters");
            dense_forward(x, &p.weights, p.bias.as_ref().expect("dense bias"))
        }
    }
}

pub fn forward(arch: &ArchitectureSpec, params: &ParameterSet, input: &Tensor) -> Result<ForwardTrace> {
    params.validate(arch)?;
    let mut x = single_sample(arch, input)?;
    let n = arch.layers().len();
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for (l, spec) in arch.layers().iter().enumerate() {
        let y = layer_forward(spec, params.layer(arch, l), &x, arch.output_shape_of(l))?;
        inputs.push(core::mem::replace(&mut x, y.clone()));
        outputs.push(y);
    }
    Ok(ForwardTrace {
        inputs,
        outputs,
        loss: None,
    })
}

/// Logits produced when `input` is fed directly into layer `start`.
pub fn forward_from(arch: &ArchitectureSpec, params: &ParameterSet, start: usize, input: &Tensor) -> Result<Tensor> {
    let n = arch.layers().len();
    if start >= n {
        return Err(Error::LayerOutOfRange { index: start, len: n });
    }
    input.expect_shape("layer input", arch.input_shape_of(start))?;
    let mut x = input.clone();
    for l in start..n {
        x = layer_forward(&arch.layers()[l], params.layer(arch, l), &x, arch.output_shape_of(l))?;
    }
    Ok(x)
}

/// `loss = -log softmax(logits)[label]`, `dlogits = softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let top = (0..z.len()).fold(0, |best, i| if z[i] > z[best] { i } else { best });
    let max = z[top];
    let exps: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    // exps[top] is exactly 1; log1p keeps the small remainder accurate.
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
    let sum = 1.0 + rest;
    let loss = libm::log1p(rest) - (z[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    // Softmax of the true class minus one, computed without cancellation:
    // p - 1 = -(sum of the other probabilities).
    grad[label] = -(exps.iter().enumerate().filter(|&(i, _)| i != label).map(|(_, e)| e).sum::<f64>() / sum);
    Ok((loss, Tensor::vector(grad)))
}

fn conv_backward(geom: &ConvGeometry, x: &Tensor, w: &Tensor, d_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n_ch, h, k, o) = (geom.in_channels, geom.in_size, geom.kernel, geom.out_size());
    let (xd, wd, gd) = (x.data(), w.data(), d_out.data());
    let mut dw = vec![0.0; geom.weight_len()];
    let mut dx = vec![0.0; geom.input_len()];
    let mut db = vec![0.0; geom.filters];
    for f in 0..geom.filters {
        for oi in 0..o {
            for oj in 0..o {
                let g = gd[(f * o + oi) * o + oj];
                db[f] += g;
                if g == 0.0 {
                    continue;
                }
                for c in 0..n_ch {
                    for ki in 0..k {
                        let Some(y) = geom.input_coord(oi, ki) else { continue };
                        for kj in 0..k {
                            let Some(xc) = geom.input_coord(oj, kj) else { continue };
                            let wi = ((f * n_ch + c) * k + ki) * k + kj;
                            let xi = (c * h + y) * h + xc;
                            dw[wi] += g * xd[xi];
                            dx[xi] += g * wd[wi];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(geom.weight_shape().to_vec(), dw).expect("shape"),
        Tensor::new(vec![geom.filters], db).expect("shape"),
        Tensor::new(geom.input_shape().to_vec(), dx).expect("shape"),
    )
}

/// Exact gradients for every parameter plus the loss gradient w.r.t. each
/// layer's input (`input_grads[l]` matches `trace.inputs[l]`).
pub fn backward_full(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    trace: &ForwardTrace,
    dlogits: &Tensor,
) -> Result<(GradientBundle, Vec<Tensor>)> {
    params.validate(arch)?;
    let n = arch.layers().len();
    if trace.inputs.len() != n || trace.outputs.len() != n {
        return Err(Error::ParameterMismatch(alloc::format!(
            "trace has {} layers, architecture has {n}",
            trace.inputs.len()
        )));
    }
    dlogits.expect_shape("logit gradient", &[arch.num_classes()])?;

    let mut grads: Vec<Option<LayerParams>> = vec![None; n];
    let mut input_grads: Vec<Tensor> = Vec::with_capacity(n);
    let mut g = dlogits.clone();
    for l in (0..n).rev() {
        let x = &trace.inputs[l];
        let spec = &arch.layers()[l];
        g = match spec {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let w = &params.layer(arch, l).expect("dense params").weights;
                let xd = x.data();
                let dz = g.data();
                let dw = Tensor::from_fn(&[*out_features, *in_features], |idx| dz[idx / in_features] * xd[idx % in_features]);
                let dx = Tensor::from_fn(&[*in_features], |i| {
                    (0..*out_features).map(|m| dz[m] * w.data()[m * in_features + i]).sum()
                });
                grads[l] = Some(LayerParams {
                    weights: dw,
                    bias: Some(g.clone()),
                });
                dx
            }
            LayerSpec::Flatten => g.reshape(x.shape())?,
            LayerSpec::Activation(a) => {
                let d = x.data().iter().zip(g.data()).map(|(&o, &gx)| gx * a.derivative_at_input(o)).collect();
                Tensor::new(x.shape().to_vec(), d)?
            }
            LayerSpec::Conv { geom, has_bias } => {
                let p = params.layer(arch, l).expect("conv params");
                let (dw, db, dx) = conv_backward(geom, x, &p.weights, &g);
                grads[l] = Some(LayerParams {
                    weights: dw,
                    bias: has_bias.then_some(db),
                });
                dx
            }
        };
        input_grads.push(g.clone());
    }
    input_grads.reverse();
    let bundle = GradientBundle {
        layers: grads.into_iter().flatten().collect(),
        arch_hash: String::new(),
        seed: None,
        loss: trace.loss,
    };
    Ok((bundle, input_grads))
}

pub fn backward(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    trace: &ForwardTrace,
    dlogits: &Tensor,
) -> Result<GradientBundle> {
    backward_full(arch, params, trace, dlogits).map(|(b, _)| b)
}

/// Forward, cross-entropy against `label`, backward.
pub fn client_gradients(
    arch: &ArchitectureSpec,
    params: &ParameterSet,
    input: &Tensor,
    label: usize,
) -> Result<GradientBundle> {
    let mut trace = forward(arch, params, input)?;
    let dlogits = trace.attach_label(label)?;
    backward(arch, params, &trace, &dlogits)
}
