use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid architecture at layer {layer}: {reason}")]
    InvalidArchitecture { layer: usize, reason: String },
    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),
    #[error("activation `{0}` requires an alpha parameter")]
    MissingAlpha(&'static str),
    #[error("activation `{kind}` does not accept alpha = {alpha}")]
    InvalidAlpha { kind: &'static str, alpha: f64 },
    #[error("value {value} is not a valid output of activation `{kind}`")]
    InvalidActivationOutput { kind: &'static str, value: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batched input (batch size {0}) is not supported; pass a single sample")]
    BatchNotSupported(usize),
    #[error("parameter set does not match architecture: {0}")]
    ParameterMismatch(String),
    #[error("every dense bias gradient is zero; the dense input cannot be recovered")]
    AllBiasGradientsZero,
    #[error("{}rank {rank} is below the {unknowns} unknowns", layer.map(|l| alloc::format!("layer {l}: ")).unwrap_or_default())]
    RankDeficient {
        layer: Option<usize>,
        rank: usize,
        unknowns: usize,
    },
    #[error("linear system has no rows")]
    EmptySystem,
    #[error("layer index {index} out of range (architecture has {len} layers)")]
    LayerOutOfRange { index: usize, len: usize },
    #[error("layer {0} is not a convolution")]
    NotConvolution(usize),
}
