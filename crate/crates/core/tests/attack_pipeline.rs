mod common;

use common::*;
use gradleak_core::attack::{
    build_gradient_constraints, build_weight_constraints, empirical_rank, empirical_system, recover_fc_input, run_attack,
    AttackOptions, ContributionMaps, UNKNOWN_ORDERING,
};
use gradleak_core::model::{init_parameters, LayerDesc};
use gradleak_core::victim::{backward, client_gradients, forward, forward_from, softmax_cross_entropy};
use gradleak_core::{Activation, ArchitectureSpec, Error, LayerSpec, ParameterSet, Tensor};
use rand::Rng;

fn loss_from(arch: &ArchitectureSpec, params: &ParameterSet, layer: usize, x: &Tensor, label: usize) -> f64 {
    softmax_cross_entropy(&forward_from(arch, params, layer, x).unwrap(), label).unwrap().0
}

fn finite_difference(arch: &ArchitectureSpec, params: &ParameterSet, layer: usize, x: &Tensor, label: usize) -> Tensor {
    let h = 1e-6;
    Tensor::from_fn(x.shape(), |i| {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        (loss_from(arch, params, layer, &plus, label) - loss_from(arch, params, layer, &minus, label)) / (2.0 * h)
    })
}

fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

fn two_block(act: Activation, filters: (usize, usize)) -> ArchitectureSpec {
    ArchitectureSpec::new(
        [2, 6, 6],
        &[
            conv(filters.0, 3, 1, 1),
            LayerDesc::Activation(act),
            conv(filters.1, 2, 2, 0),
            LayerDesc::Activation(act),
            LayerDesc::Flatten,
            LayerDesc::Dense { units: 5 },
        ],
    )
    .unwrap()
}

#[test]
fn dense_only_network_returns_reshaped_fc_input() {
    let arch = ArchitectureSpec::new([1, 3, 3], &[LayerDesc::Flatten, LayerDesc::Dense { units: 4 }]).unwrap();
    let c = case(arch, 11);
    let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
    let dense = &c.grads.layers[0];
    let (fc, _) = recover_fc_input(&dense.weights, dense.bias.as_ref().unwrap()).unwrap();
    assert_eq!(r.input.shape(), &[1, 3, 3]);
    assert_eq!(r.input.data(), fc.data());
    assert!(r.layers.is_empty());
    assert!(mse(&r.input, &c.input) < 1e-20);
}

#[test]
fn sigmoid_two_blocks_recover_input() {
    for seed in 0..5 {
        let c = case(two_block(Activation::Sigmoid, (6, 10)), seed);
        let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
        assert!(mse(&r.input, &c.input) <= 1e-8, "seed {seed}");
        assert_eq!(r.unknown_ordering(), UNKNOWN_ORDERING);
        assert_eq!(r.layers.len(), 2);
        assert_eq!(r.layers[0].diagnostics.layer, 2);
        assert_eq!(r.layers[1].diagnostics.layer, 0);
        for l in &r.layers {
            let d = l.diagnostics;
            assert_eq!(d.matrix_rank, d.n_unknowns);
            assert!(l.known_mask.iter().all(|&k| k));
        }
    }
}

#[test]
fn relu_lenet_like_recovers_input_with_and_without_weight_rows() {
    for size in [16, 32] {
        let c = case(lenet_like(size, Activation::Relu), size as u64);
        for use_weight_constraints in [true, false] {
            let opts = AttackOptions { use_weight_constraints, ..Default::default() };
            let r = run_attack(&c.arch, &c.params, &c.grads, &opts).unwrap();
            assert!(mse(&r.input, &c.input) <= 1e-6);
            if !use_weight_constraints {
                assert!(r.layers.iter().all(|l| l.diagnostics.n_weight_constraints == 0));
            }
        }
    }
}

#[test]
fn attack_ignores_the_loss() {
    let mut rng = rng(3);
    for act in [Activation::Relu, Activation::Tanh, Activation::Elu(0.7)] {
        let c = case(two_block(act, (6, 10)), 21);
        let base = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
        let trace = forward(&c.arch, &c.params, &c.input).unwrap();
        for _ in 0..3 {
            let dlogits = random_tensor(&[c.arch.num_classes()], 2.0, &mut rng);
            let grads = backward(&c.arch, &c.params, &trace, &dlogits).unwrap();
            let other = run_attack(&c.arch, &c.params, &grads, &AttackOptions::default()).unwrap();
            let diff = base.input.data().iter().zip(other.input.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{act}: {diff}");
        }
    }
}

#[test]
fn true_input_satisfies_every_row() {
    for act in [Activation::Relu, Activation::Sigmoid, Activation::LeakyRelu] {
        let c = case(two_block(act, (3, 4)), 5);
        let mut trace = forward(&c.arch, &c.params, &c.input).unwrap();
        let dlogits = trace.attach_label(c.label).unwrap();
        let (_, input_grads) = gradleak_core::victim::backward_full(&c.arch, &c.params, &trace, &dlogits).unwrap();
        for (l, geom, _) in c.arch.conv_blocks() {
            let maps = ContributionMaps::new(&geom);
            let p = c.params.layer(&c.arch, l).unwrap();
            let g = c.grads.layer(&c.arch, l).unwrap();
            // conv output gradient = gradient w.r.t. the following activation's input
            let d_out = input_grads[l + 1].clone();
            let x = trace.inputs[l].data();

            let rows = build_gradient_constraints(&d_out, &g.weights, &maps).unwrap();
            assert_eq!(rows.len(), geom.weight_len());
            assert!(rows.max_violation(x) <= 1e-10);

            let pre = &trace.outputs[l];
            let known = vec![true; pre.len()];
            let rows = build_weight_constraints(pre, &known, &p.weights, p.bias.as_ref(), &maps).unwrap();
            assert_eq!(rows.len(), geom.output_len());
            assert!(rows.max_violation(x) <= 1e-10);
        }
    }
}

#[test]
fn relu_weight_rows_match_positive_outputs() {
    let c = case(two_block(Activation::Relu, (6, 10)), 8);
    let trace = forward(&c.arch, &c.params, &c.input).unwrap();
    let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
    for state in &r.layers {
        let l = state.diagnostics.layer;
        let positive = trace.outputs[l + 1].data().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(state.diagnostics.n_weight_constraints, positive);
    }
}

#[test]
fn propagated_gradients_match_finite_differences() {
    for (i, act) in [Activation::Sigmoid, Activation::Tanh, Activation::ArcTan, Activation::SoftPlus, Activation::Relu]
        .into_iter()
        .enumerate()
    {
        let c = case(two_block(act, (6, 10)), 40 + i as u64);
        let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
        let (dense, _, _) = c.arch.dense_layer();
        let fd = finite_difference(&c.arch, &c.params, dense, &r.fc_input, c.label);
        assert!(max_rel_err(&r.fc_input_grad, &fd) <= 1e-5, "{act} dense");
        for state in &r.layers {
            let l = state.diagnostics.layer;
            let fd = finite_difference(&c.arch, &c.params, l, &state.input, c.label);
            assert!(max_rel_err(&state.input_grad, &fd) <= 1e-4, "{act} layer {l}");
        }
    }
}

#[test]
fn solve_examples_on_three_by_three() {
    let one = |filters| {
        ArchitectureSpec::new(
            [1, 3, 3],
            &[conv(filters, 2, 1, 0), LayerDesc::Activation(Activation::Relu), LayerDesc::Flatten, LayerDesc::Dense {
                units: 3,
            }],
        )
        .unwrap()
    };
    let c = case(one(3), 2);
    let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
    assert!(mse(&r.input, &c.input) <= 1e-8);

    let c = case(one(1), 2);
    let opts = AttackOptions { use_weight_constraints: false, ..Default::default() };
    match run_attack(&c.arch, &c.params, &c.grads, &opts) {
        Err(Error::RankDeficient { layer: Some(0), rank, unknowns: 9 }) => assert!(rank <= 4),
        other => panic!("expected rank deficiency, got {other:?}"),
    }
    assert!(empirical_rank(&c.arch, &c.params, &c.grads, 0, &opts).unwrap() <= 4);
}

#[test]
fn empirical_rank_fixtures() {
    let c = case(two_block(Activation::Sigmoid, (6, 10)), 9);
    let opts = AttackOptions::default();
    for (l, geom, _) in c.arch.conv_blocks() {
        assert_eq!(empirical_rank(&c.arch, &c.params, &c.grads, l, &opts).unwrap(), geom.input_len());
    }
    assert!(matches!(
        empirical_rank(&c.arch, &c.params, &c.grads, 1, &opts),
        Err(Error::NotConvolution(1))
    ));
    assert!(matches!(
        empirical_rank(&c.arch, &c.params, &c.grads, 99, &opts),
        Err(Error::LayerOutOfRange { index: 99, .. })
    ));

    // Zero dense weights make every upstream gradient zero, so only weight
    // rows are left in the last conv layer.
    let mut params = c.params.clone();
    let dense_slot = params.layers.len() - 1;
    params.layers[dense_slot].weights = Tensor::zeros(params.layers[dense_slot].weights.shape());
    let grads = client_gradients(&c.arch, &params, &c.input, c.label).unwrap();
    let sys = empirical_system(&c.arch, &params, &grads, 2, &opts).unwrap();
    // 10 filters on a 3x3 output
    assert_eq!(sys.n_weight_constraints, 90);
    assert_eq!(sys.n_gradient_constraints, 240);
    assert_eq!(sys.rank, 90);
    let only_grad = AttackOptions { use_weight_constraints: false, ..opts };
    assert_eq!(empirical_rank(&c.arch, &params, &grads, 2, &only_grad).unwrap(), 0);
}

#[test]
fn confident_prediction_stops_the_attack() {
    let c = case(two_block(Activation::Tanh, (6, 10)), 1);
    let trace = forward(&c.arch, &c.params, &c.input).unwrap();
    let grads = backward(&c.arch, &c.params, &trace, &Tensor::zeros(&[5])).unwrap();
    assert!(matches!(
        run_attack(&c.arch, &c.params, &grads, &AttackOptions::default()),
        Err(Error::AllBiasGradientsZero)
    ));
}

#[test]
fn averaged_fc_estimate_agrees() {
    let c = case(lenet_like(16, Activation::Sigmoid), 4);
    let opts = AttackOptions { average_fc_estimates: true, ..Default::default() };
    let r = run_attack(&c.arch, &c.params, &c.grads, &opts).unwrap();
    assert_eq!(r.fc_node, None);
    assert!(mse(&r.input, &c.input) <= 1e-8);
}

#[test]
fn mismatched_gradients_are_rejected() {
    let c = case(two_block(Activation::Relu, (6, 10)), 1);
    let mut grads = c.grads.clone();
    grads.layers.pop();
    assert!(run_attack(&c.arch, &c.params, &grads, &AttackOptions::default()).is_err());
    let mut grads = c.grads.clone();
    grads.layers[0].weights = Tensor::zeros(&[1]);
    assert!(run_attack(&c.arch, &c.params, &grads, &AttackOptions::default()).is_err());
}

#[test]
fn random_relu_inputs_recover_across_seeds() {
    let mut rng = rng(77);
    for _ in 0..5 {
        let seed = rng.gen::<u64>();
        let arch = init_parameters(&lenet_like(16, Activation::Relu), seed);
        let c = case(lenet_like(16, Activation::Relu), seed);
        assert_eq!(arch, c.params);
        let r = run_attack(&c.arch, &c.params, &c.grads, &AttackOptions::default()).unwrap();
        assert!(mse(&r.input, &c.input) <= 1e-6);
        assert!(matches!(c.arch.layers()[0], LayerSpec::Conv { .. }));
    }
}
