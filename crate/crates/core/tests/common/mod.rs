#![allow(dead_code)]

use gradleak_core::model::{init_parameters, LayerDesc};
use gradleak_core::victim::client_gradients;
use gradleak_core::{Activation, ArchitectureSpec, GradientBundle, ParameterSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn conv(filters: usize, kernel: usize, stride: usize, padding: usize) -> LayerDesc {
    LayerDesc::Conv { filters, kernel, stride, padding, bias: false }
}

/// Two strided conv blocks then a 10-way dense layer.
///
/// 32x32: 8x8@32 /4 -> 8x8, 4x4@8 /2 -> 4x4.
/// 16x16: 4x4@32 /2 -> 8x8, 4x4@8 /2 -> 4x4.
pub fn lenet_like(size: usize, act: Activation) -> ArchitectureSpec {
    let first = match size {
        32 => conv(32, 8, 4, 2),
        16 => conv(32, 4, 2, 1),
        _ => panic!("unsupported size {size}"),
    };
    ArchitectureSpec::new(
        [3, size, size],
        &[
            first,
            LayerDesc::Activation(act),
            conv(8, 4, 2, 1),
            LayerDesc::Activation(act),
            LayerDesc::Flatten,
            LayerDesc::Dense { units: 10 },
        ],
    )
    .unwrap()
}

pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub struct Case {
    pub arch: ArchitectureSpec,
    pub params: ParameterSet,
    pub input: Tensor,
    pub label: usize,
    pub grads: GradientBundle,
}

pub fn case(arch: ArchitectureSpec, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let params = init_parameters(&arch, seed);
    let input = random_input(&arch.input_shape(), &mut rng);
    let label = rng.gen_range(0..arch.num_classes());
    let grads = client_gradients(&arch, &params, &input, label).unwrap();
    Case { arch, params, input, label, grads }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
