//! Architecture description, shape inference and parameter containers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

/// Layer as written by a user, before shape inference.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Activation(Activation),
    Flatten,
    Dense {
        units: usize,
    },
}

/// Layer with every dimension resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { geom: ConvGeometry, has_bias: bool },
    Activation(Activation),
    Flatten,
    Dense { in_features: usize, out_features: usize },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::Dense { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self {
            Self::Conv { geom, .. } => Some(geom.weight_shape().to_vec()),
            Self::Dense {
                in_features,
                out_features,
            } => Some(vec![*out_features, *in_features]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match self {
            Self::Conv {
                geom,
                has_bias: true,
            } => Some(vec![geom.filters]),
            Self::Dense { out_features, .. } => Some(vec![*out_features]),
            _ => None,
        }
    }

    pub fn desc(&self) -> LayerDesc {
        match *self {
            Self::Conv { geom, has_bias } => LayerDesc::Conv {
                filters: geom.filters,
                kernel: geom.kernel,
                stride: geom.stride,
                padding: geom.padding,
                bias: has_bias,
            },
            Self::Activation(a) => LayerDesc::Activation(a),
            Self::Flatten => LayerDesc::Flatten,
            Self::Dense { out_features, .. } => LayerDesc::Dense {
                units: out_features,
            },
        }
    }
}

/// Validated network: `(conv, activation)*`, `flatten`, `dense`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    output_shapes: Vec<Vec<usize>>,
}

impl ArchitectureSpec {
    /// Runs shape inference over `layers` starting from `(channels, height, width)`.
    pub fn new(input_shape: [usize; 3], layers: &[LayerDesc]) -> Result<Self> {
        let invalid = |layer: usize, reason: String| Error::InvalidArchitecture { layer, reason };
        let [c, h, w] = input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(invalid(0, format!("input shape {input_shape:?} has a zero dimension")));
        }
        if h != w {
            return Err(invalid(0, format!("input must be square, got {h}x{w}")));
        }
        if layers.is_empty() {
            return Err(invalid(0, "architecture has no layers".into()));
        }

        let mut shape = vec![c, h, w];
        let mut specs = Vec::with_capacity(layers.len());
        let mut output_shapes = Vec::with_capacity(layers.len());
        let last = layers.len() - 1;
        for (i, desc) in layers.iter().enumerate() {
            let prev = i.checked_sub(1).map(|p| &layers[p]);
            let spec = match *desc {
                LayerDesc::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    if !matches!(prev, None | Some(LayerDesc::Activation(_))) {
                        return Err(invalid(i, "convolution must start the network or follow an activation".into()));
                    }
                    if !matches!(layers.get(i + 1), Some(LayerDesc::Activation(_))) {
                        return Err(invalid(i, "convolution must be followed by an activation".into()));
                    }
                    let geom = ConvGeometry::new(shape[0], shape[1], filters, kernel, stride, padding)
                        .map_err(|e| invalid(i, format!("{e}")))?;
                    shape = geom.output_shape().to_vec();
                    LayerSpec::Conv {
                        geom,
                        has_bias: bias,
                    }
                }
                LayerDesc::Activation(act) => {
                    if !matches!(prev, Some(LayerDesc::Conv { .. })) {
                        return Err(invalid(i, "activation must follow a convolution".into()));
                    }
                    LayerSpec::Activation(act)
                }
                LayerDesc::Flatten => {
                    if i + 1 != last || !matches!(layers[last], LayerDesc::Dense { .. }) {
                        return Err(invalid(i, "flatten must sit immediately before the final dense layer".into()));
                    }
                    shape = vec![shape.iter().product()];
                    LayerSpec::Flatten
                }
                LayerDesc::Dense { units } => {
                    if i != last {
                        return Err(invalid(i, "dense layer must be the last layer".into()));
                    }
                    if !matches!(prev, Some(LayerDesc::Flatten)) {
                        return Err(invalid(i, "dense layer must follow flatten".into()));
                    }
                    if units == 0 {
                        return Err(invalid(i, "dense layer needs at least one unit".into()));
                    }
                    let in_features = shape[0];
                    shape = vec![units];
                    LayerSpec::Dense {
                        in_features,
                        out_features: units,
                    }
                }
            };
            specs.push(spec);
            output_shapes.push(shape.clone());
        }
        if !matches!(layers[last], LayerDesc::Dense { .. }) {
            return Err(invalid(last, "network must end with a dense layer".into()));
        }
        Ok(Self {
            input_shape,
            layers: specs,
            output_shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn descs(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(LayerSpec::desc).collect()
    }

    pub fn input_shape_of(&self, layer: usize) -> &[usize] {
        match layer {
            0 => &self.input_shape,
            l => &self.output_shapes[l - 1],
        }
    }

    pub fn output_shape_of(&self, layer: usize) -> &[usize] {
        &self.output_shapes[layer]
    }

    pub fn num_classes(&self) -> usize {
        self.output_shapes.last().map_or(0, |s| s[0])
    }

    /// `(layer index, spec)` for every layer that owns parameters, in order.
    pub fn param_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.has_params())
    }

    /// `(layer index, geometry, following activation)` for every conv block.
    pub fn conv_blocks(&self) -> impl Iterator<Item = (usize, ConvGeometry, Activation)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| match (l, self.layers.get(i + 1)) {
            (LayerSpec::Conv { geom, .. }, Some(LayerSpec::Activation(a))) => Some((i, *geom, *a)),
            _ => None,
        })
    }

    /// Slot of layer `layer` inside a [`ParameterSet`], if it has parameters.
    pub fn param_slot(&self, layer: usize) -> Option<usize> {
        self.layers.get(layer)?.has_params().then(|| {
            self.layers[..layer].iter().filter(|l| l.has_params()).count()
        })
    }

    pub fn dense_layer(&self) -> (usize, usize, usize) {
        let idx = self.layers.len() - 1;
        match self.layers[idx] {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (idx, in_features, out_features),
            _ => unreachable!("validated architecture ends with dense"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

/// One [`LayerParams`] per parameterised layer (conv and dense), in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<LayerParams>,
}

fn check_layers(arch: &ArchitectureSpec, layers: &[LayerParams], what: &str) -> Result<()> {
    let expected = arch.param_layers().count();
    if layers.len() != expected {
        return Err(Error::ParameterMismatch(format!(
            "{what} has {} layers, architecture has {expected} parameterised layers",
            layers.len()
        )));
    }
    for ((idx, spec), p) in arch.param_layers().zip(layers) {
        let ws = spec.weight_shape().unwrap_or_default();
        if p.weights.shape() != ws.as_slice() {
            return Err(Error::ParameterMismatch(format!(
                "{what} layer {idx}: weight shape {:?}, expected {ws:?}",
                p.weights.shape()
            )));
        }
        match (spec.bias_shape(), &p.bias) {
            (None, None) => {}
            (Some(bs), Some(b)) if b.shape() == bs.as_slice() => {}
            (bs, b) => {
                return Err(Error::ParameterMismatch(format!(
                    "{what} layer {idx}: bias {:?}, expected {bs:?}",
                    b.as_ref().map(|b| b.shape().to_vec())
                )))
            }
        }
        let finite = p.weights.is_finite() && p.bias.as_ref().is_none_or(Tensor::is_finite);
        if !finite {
            return Err(Error::ParameterMismatch(format!("{what} layer {idx}: non-finite entry")));
        }
    }
    Ok(())
}

impl ParameterSet {
    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        check_layers(arch, &self.layers, "parameter set")
    }

    pub fn layer(&self, arch: &ArchitectureSpec, layer: usize) -> Option<&LayerParams> {
        self.layers.get(arch.param_slot(layer)?)
    }
}

/// Gradients leaked by one training step, shaped like a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerParams>,
    pub arch_hash: String,
    pub seed: Option<u64>,
    pub loss: Option<f64>,
}

impl GradientBundle {
    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        check_layers(arch, &self.layers, "gradient bundle")
    }

    pub fn layer(&self, arch: &ArchitectureSpec, layer: usize) -> Option<&LayerParams> {
        self.layers.get(arch.param_slot(layer)?)
    }
}

/// Deterministic parameters: weights uniform in `[-0.5, 0.5]`, biases in
/// `[-0.1, 0.1]`.
pub fn init_parameters(arch: &ArchitectureSpec, seed: u64) -> ParameterSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layers = arch
        .param_layers()
        .map(|(_, spec)| {
            let ws = spec.weight_shape().unwrap_or_default();
            let weights = Tensor::from_fn(&ws, |_| rng.gen_range(-0.5..=0.5));
            let bias = spec
                .bias_shape()
                .map(|bs| Tensor::from_fn(&bs, |_| rng.gen_range(-0.1..=0.1)));
            LayerParams { weights, bias }
        })
        .collect();
    ParameterSet { layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(filters: usize, kernel: usize, stride: usize, padding: usize) -> LayerDesc {
        LayerDesc::Conv {
            filters,
            kernel,
            stride,
            padding,
            bias: false,
        }
    }

    fn lenet_like() -> Vec<LayerDesc> {
        vec![
            conv(12, 5, 2, 2),
            LayerDesc::Activation(Activation::Relu),
            conv(12, 5, 2, 2),
            LayerDesc::Activation(Activation::Relu),
            conv(12, 5, 1, 2),
            LayerDesc::Activation(Activation::Relu),
            LayerDesc::Flatten,
            LayerDesc::Dense { units: 10 },
        ]
    }

    #[test]
    fn shape_chain() {
        // 31 -> 16 passes, but the second layer then sees (16+4-5) = 15, odd
        let arch = ArchitectureSpec::new([3, 31, 31], &lenet_like());
        assert!(arch.is_err());
        // 29 -> (29+4-5)/2+1 = 15 -> (15+4-5)/2+1 = 8 -> 8, flattened 12*8*8 = 768
        let arch = ArchitectureSpec::new([3, 29, 29], &lenet_like()).unwrap();
        assert_eq!(arch.output_shape_of(0), &[12, 15, 15]);
        assert_eq!(arch.output_shape_of(2), &[12, 8, 8]);
        assert_eq!(arch.output_shape_of(6), &[768]);
        assert_eq!(arch.dense_layer(), (7, 768, 10));
        assert_eq!(arch.param_slot(2), Some(1));
        assert_eq!(arch.param_slot(3), None);
        assert_eq!(arch.conv_blocks().count(), 3);
    }

    #[test]
    fn divisibility_error() {
        let layers = [conv(1, 2, 3, 0), LayerDesc::Activation(Activation::Relu), LayerDesc::Flatten, LayerDesc::Dense { units: 2 }];
        let err = ArchitectureSpec::new([1, 4, 4], &layers).unwrap_err();
        assert!(matches!(err, Error::InvalidArchitecture { layer: 0, .. }), "{err}");
    }

    #[test]
    fn ordering_errors() {
        let dense_first = [LayerDesc::Dense { units: 2 }, LayerDesc::Flatten];
        assert!(matches!(
            ArchitectureSpec::new([1, 4, 4], &dense_first),
            Err(Error::InvalidArchitecture { layer: 0, .. })
        ));
        let no_act = [conv(1, 1, 1, 0), LayerDesc::Flatten, LayerDesc::Dense { units: 2 }];
        assert!(matches!(
            ArchitectureSpec::new([1, 4, 4], &no_act),
            Err(Error::InvalidArchitecture { layer: 0, .. })
        ));
        let two_dense = [LayerDesc::Flatten, LayerDesc::Dense { units: 2 }, LayerDesc::Dense { units: 2 }];
        assert!(matches!(
            ArchitectureSpec::new([1, 4, 4], &two_dense),
            Err(Error::InvalidArchitecture { layer: 0, .. })
        ));
        assert!(ArchitectureSpec::new([1, 4, 5], &[LayerDesc::Flatten, LayerDesc::Dense { units: 2 }]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = ArchitectureSpec::new([3, 29, 29], &lenet_like()).unwrap();
        let a = init_parameters(&arch, 42);
        assert_eq!(a, init_parameters(&arch, 42));
        assert_ne!(a, init_parameters(&arch, 43));
        a.validate(&arch).unwrap();
        for p in &a.layers {
            assert!(p.weights.data().iter().all(|w| w.abs() <= 0.5));
            if let Some(b) = &p.bias {
                assert!(b.data().iter().all(|v| v.abs() <= 0.1));
            }
        }
        // conv layers default to no bias, dense always has one
        assert!(a.layers[0].bias.is_none());
        assert!(a.layers[3].bias.is_some());
    }

    #[test]
    fn bundle_layer_count_mismatch() {
        let arch = ArchitectureSpec::new([3, 29, 29], &lenet_like()).unwrap();
        let mut params = init_parameters(&arch, 1);
        params.layers.pop();
        let bundle = GradientBundle {
            layers: params.layers,
            arch_hash: String::new(),
            seed: None,
            loss: None,
        };
        assert!(matches!(bundle.validate(&arch), Err(Error::ParameterMismatch(_))));
    }
}
