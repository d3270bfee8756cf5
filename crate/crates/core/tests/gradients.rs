mod common;

use common::*;
use vocalid::nn::{Mode, Network, Tensor};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (seed, (label, spec, shape)) in layer_cases().into_iter().enumerate() {
        for mode in [Mode::Train, Mode::Eval] {
            let mut g = rng(seed as u64);
            let mut net = Network::<f64>::build(&[("layer".into(), spec.clone())], &mut g).unwrap();
            jitter_params(&mut net, &mut g);
            let x = random_tensor(&shape, &mut g);
            let (err, at) = gradient_check(&mut net, &x, mode, 100 + seed as u64);
            assert!(err < GRAD_TOL, "{label} ({mode:?}): relative error {err:e} at {at}");
        }
    }
}

// Eval mode: in train mode a batch norm cancels the per-channel shift of the
// layer before it, leaving exact-zero gradients that the relative criterion
// cannot resolve against finite-difference rounding noise.
#[test]
fn random_compositions_match_finite_differences() {
    let mut g = rng(7);
    for case in 0..20 {
        let (specs, shape) = random_composition(4, &mut g);
        let mut net = Network::<f64>::build(&specs, &mut g).unwrap();
        jitter_params(&mut net, &mut g);
        let x = random_tensor(&shape, &mut g);
        let (err, at) = gradient_check(&mut net, &x, Mode::Eval, case);
        assert!(err < GRAD_TOL, "composition {case} {specs:?}: relative error {err:e} at {at}");
    }
}

#[test]
fn dense_sum_loss_gradient_is_outer_product_of_ones_and_input() {
    let mut g = rng(1);
    let spec = vocalid::nn::LayerSpec::Dense { in_features: 3, out_features: 2 };
    let mut net = Network::<f64>::build(&[("fc".into(), spec)], &mut g).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    net.forward(&x, Mode::Train).unwrap();
    net.backward(&Tensor::full(vec![1, 2], 1.0)).unwrap();
    net.visit(&mut |name, t, _| {
        if name == "fc.weight" {
            assert_eq!(t.grad().unwrap(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        }
    });
}

#[test]
fn zero_input_gives_zero_gradient_to_weights_of_dead_units() {
    use vocalid::nn::LayerSpec;
    let mut g = rng(2);
    let specs = vec![
        ("fc1".to_string(), LayerSpec::Dense { in_features: 4, out_features: 3 }),
        ("act".to_string(), LayerSpec::Relu),
        ("fc2".to_string(), LayerSpec::Dense { in_features: 3, out_features: 2 }),
    ];
    let mut net = Network::<f64>::build(&specs, &mut g).unwrap();
    // zero biases and zero input: every hidden pre-activation is 0, so every unit is dead.
    net.visit_mut(&mut |name, t, _| {
        if name.ends_with("bias") {
            t.data_mut().fill(0.0);
        }
    });
    let x = Tensor::zeros(vec![2, 4]);
    net.forward(&x, Mode::Train).unwrap();
    net.backward(&Tensor::full(vec![2, 2], 1.0)).unwrap();
    net.visit(&mut |name, t, _| {
        if name.starts_with("fc1") || name == "fc2.weight" {
            assert!(t.grad().unwrap().iter().all(|&v| v == 0.0), "{name}");
        }
    });
}

#[test]
fn backward_before_forward_is_a_state_error() {
    let mut g = rng(3);
    let (specs, _) = random_composition(3, &mut g);
    let mut net = Network::<f64>::build(&specs, &mut g).unwrap();
    let err = net.backward(&Tensor::zeros(vec![1])).unwrap_err();
    assert!(matches!(err, vocalid::Error::State(_)));
}
