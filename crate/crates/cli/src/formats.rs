//! JSON documents for architectures, tensors, parameter sets and gradient
//! bundles.
//!
//! Floats go through `serde_json`'s shortest round-trip formatting, so every
//! `f64` reads back bit-identical. Non-finite values cannot be represented in
//! JSON and are rejected on write.

use std::path::Path;

use gradleak_core::model::LayerDesc;
use gradleak_core::{Activation, ArchitectureSpec, GradientBundle, LayerParams, ParameterSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDoc {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        #[serde(default)]
        bias: bool,
    },
    Activation {
        kind: String,
        #[serde(default)]
        alpha: Option<f64>,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDoc {
    pub input: InputDoc,
    pub layers: Vec<LayerDoc>,
}

impl ArchDoc {
    pub fn from_spec(arch: &ArchitectureSpec) -> Self {
        let [channels, height, width] = arch.input_shape();
        let layers = arch
            .descs()
            .into_iter()
            .map(|d| match d {
                LayerDesc::Conv { filters, kernel, stride, padding, bias } => {
                    LayerDoc::Conv { filters, kernel, stride, padding, bias }
                }
                LayerDesc::Activation(a) => LayerDoc::Activation { kind: a.name().to_owned(), alpha: a.alpha() },
                LayerDesc::Flatten => LayerDoc::Flatten,
                LayerDesc::Dense { units } => LayerDoc::Dense { units },
            })
            .collect();
        Self { input: InputDoc { channels, height, width }, layers }
    }

    pub fn to_spec(&self) -> Result<ArchitectureSpec, CliError> {
        let mut descs = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            descs.push(match l {
                &LayerDoc::Conv { filters, kernel, stride, padding, bias } => {
                    LayerDesc::Conv { filters, kernel, stride, padding, bias }
                }
                LayerDoc::Activation { kind, alpha } => LayerDesc::Activation(
                    Activation::from_kind(kind, *alpha).map_err(|e| CliError::Invalid(format!("layer {i}: {e}")))?,
                ),
                LayerDoc::Flatten => LayerDesc::Flatten,
                &LayerDoc::Dense { units } => LayerDesc::Dense { units },
            });
        }
        let input = [self.input.channels, self.input.height, self.input.width];
        Ok(ArchitectureSpec::new(input, &descs)?)
    }
}

/// Hex SHA-256 of the canonical architecture document.
///
/// Canonical means re-serialized from the validated spec: fixed key order,
/// no whitespace, defaults filled in, alpha dropped where it is ignored.
pub fn arch_hash(arch: &ArchitectureSpec) -> String {
    let canonical = serde_json::to_string(&ArchDoc::from_spec(arch)).expect("architecture serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDoc {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorDoc {
    pub fn from_tensor(t: &Tensor) -> Result<Self, CliError> {
        if !t.is_finite() {
            return Err(CliError::Invalid("tensor contains a non-finite value".into()));
        }
        Ok(Self { shape: t.shape().to_vec(), data: t.data().to_vec() })
    }

    pub fn into_tensor(self) -> Result<Tensor, CliError> {
        Ok(Tensor::new(self.shape, self.data)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParamsDoc {
    pub weights: TensorDoc,
    pub bias: Option<TensorDoc>,
}

/// Shared layout of `params.json` and `grads.json`: one entry per conv or
/// dense layer, in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub arch_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    pub layers: Vec<LayerParamsDoc>,
}

fn layers_to_docs(layers: &[LayerParams]) -> Result<Vec<LayerParamsDoc>, CliError> {
    layers
        .iter()
        .map(|l| {
            Ok(LayerParamsDoc {
                weights: TensorDoc::from_tensor(&l.weights)?,
                bias: l.bias.as_ref().map(TensorDoc::from_tensor).transpose()?,
            })
        })
        .collect()
}

fn docs_to_layers(docs: Vec<LayerParamsDoc>) -> Result<Vec<LayerParams>, CliError> {
    docs.into_iter()
        .map(|d| {
            Ok(LayerParams { weights: d.weights.into_tensor()?, bias: d.bias.map(TensorDoc::into_tensor).transpose()? })
        })
        .collect()
}

impl ParamsDoc {
    pub fn from_params(params: &ParameterSet, arch_hash: &str, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(Self { arch_hash: arch_hash.to_owned(), seed, loss: None, layers: layers_to_docs(&params.layers)? })
    }

    pub fn from_grads(grads: &GradientBundle) -> Result<Self, CliError> {
        if grads.loss.is_some_and(|l| !l.is_finite()) {
            return Err(CliError::Invalid("loss is not finite".into()));
        }
        Ok(Self {
            arch_hash: grads.arch_hash.clone(),
            seed: grads.seed,
            loss: grads.loss,
            layers: layers_to_docs(&grads.layers)?,
        })
    }

    pub fn into_params(self) -> Result<(ParameterSet, String), CliError> {
        Ok((ParameterSet { layers: docs_to_layers(self.layers)? }, self.arch_hash))
    }

    pub fn into_grads(self) -> Result<GradientBundle, CliError> {
        Ok(GradientBundle {
            layers: docs_to_layers(self.layers)?,
            arch_hash: self.arch_hash,
            seed: self.seed,
            loss: self.loss,
        })
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serializes");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_arch(path: &Path) -> Result<ArchitectureSpec, CliError> {
    read_json::<ArchDoc>(path)?.to_spec()
}

pub fn read_tensor(path: &Path) -> Result<Tensor, CliError> {
    read_json::<TensorDoc>(path)?.into_tensor()
}

pub fn tensor_json(t: &Tensor) -> Result<String, CliError> {
    Ok(to_json(&TensorDoc::from_tensor(t)?))
}
