//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocalid::nn::{LayerSpec, Mode, Network, Padding, ParamKind, Tensor};

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Moves every trainable parameter to a generic point: zero-initialised biases
/// can otherwise sit exactly on a ReLU kink.
pub fn jitter_params(net: &mut Network<f64>, rng: &mut impl Rng) {
    net.visit_mut(&mut |_, t, kind| {
        if kind == ParamKind::Trainable {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
    });
}

fn projected_loss(net: &mut Network<f64>, x: &Tensor<f64>, r: &[f64], mode: Mode) -> f64 {
    let y = net.forward(x, mode).unwrap();
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst per-element `|analytic - numeric| / (|analytic| + 1e-8)` over every
/// trainable parameter and the input, for the loss `sum(r * net(x))`.
pub fn gradient_check(net: &mut Network<f64>, x: &Tensor<f64>, mode: Mode, seed: u64) -> (f64, String) {
    let mut g = rng(seed);
    let y = net.forward(x, mode).unwrap();
    let r: Vec<f64> = (0..y.numel()).map(|_| g.random_range(-1.0..1.0)).collect();
    net.zero_grad();
    let dx = net.backward(&Tensor::new(y.shape().to_vec(), r.clone()).unwrap()).unwrap();

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    net.visit(&mut |name, t, kind| {
        if kind == ParamKind::Trainable {
            let grad = t.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
            analytic.push((name.to_string(), grad));
        }
    });

    let mut worst = (0.0f64, String::from("none"));
    let mut record = |a: f64, n: f64, what: String| {
        let rel = (a - n).abs() / (a.abs() + 1e-8);
        if rel > worst.0 {
            worst = (rel, what);
        }
    };

    for (ti, (name, grads)) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let eval = |delta: f64, net: &mut Network<f64>| {
                let mut idx = 0;
                net.visit_mut(&mut |_, t, kind| {
                    if kind == ParamKind::Trainable {
                        if idx == ti {
                            t.data_mut()[k] += delta;
                        }
                        idx += 1;
                    }
                });
            };
            eval(FD_EPS, net);
            let lp = projected_loss(net, x, &r, mode);
            eval(-2.0 * FD_EPS, net);
            let lm = projected_loss(net, x, &r, mode);
            eval(FD_EPS, net);
            record(a, (lp - lm) / (2.0 * FD_EPS), format!("{name}[{k}]"));
        }
    }
    for k in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[k] += FD_EPS;
        let lp = projected_loss(net, &xp, &r, mode);
        xp.data_mut()[k] -= 2.0 * FD_EPS;
        let lm = projected_loss(net, &xp, &r, mode);
        record(dx.data()[k], (lp - lm) / (2.0 * FD_EPS), format!("input[{k}]"));
    }
    worst
}

/// One single-layer case per layer kind: (label, spec, input shape).
pub fn layer_cases() -> Vec<(&'static str, LayerSpec, Vec<usize>)> {
    vec![
        ("conv1d_same_dilated", LayerSpec::Conv1d { in_channels: 3, out_channels: 4, kernel: 3, dilation: 2, stride: 1, padding: Padding::Same }, vec![2, 3, 9]),
        ("conv1d_valid_strided", LayerSpec::Conv1d { in_channels: 2, out_channels: 3, kernel: 4, dilation: 1, stride: 2, padding: Padding::Valid }, vec![2, 2, 11]),
        ("conv2d_same", LayerSpec::Conv2d { in_channels: 2, out_channels: 4, kernel: 3, stride: 1, padding: Padding::Same }, vec![2, 2, 5, 6]),
        ("conv2d_valid_strided", LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 2, padding: Padding::Valid }, vec![2, 1, 7, 6]),
        ("dense", LayerSpec::Dense { in_features: 6, out_features: 4 }, vec![3, 2, 3]),
        ("batchnorm", LayerSpec::Batchnorm { channels: 3 }, vec![4, 3, 5]),
        ("mfm", LayerSpec::Mfm, vec![2, 4, 5]),
        ("relu", LayerSpec::Relu, vec![3, 6]),
        ("sigmoid", LayerSpec::Sigmoid, vec![3, 6]),
        ("softmax", LayerSpec::Softmax, vec![3, 6]),
        ("se_block", LayerSpec::SeBlock { channels: 4, bottleneck: 2 }, vec![2, 4, 7]),
        ("tdnn_residual", LayerSpec::DilatedTdnnBlock { in_channels: 4, out_channels: 4, kernel: 3, dilation: 2 }, vec![3, 4, 9]),
        ("tdnn_projection", LayerSpec::DilatedTdnnBlock { in_channels: 3, out_channels: 5, kernel: 5, dilation: 1 }, vec![3, 3, 8]),
        ("attentive_stats_pool", LayerSpec::AttentiveStatsPool { channels: 4, attention_dim: 3 }, vec![2, 4, 8]),
        ("mean_pool", LayerSpec::MeanPool, vec![2, 3, 5]),
        ("max_pool2d", LayerSpec::MaxPool2d { kernel: 2, stride: 2 }, vec![2, 2, 6, 6]),
    ]
}

/// A random stack of up to `depth` layers over `[B, C, T]` inputs, closed by
/// a pooling or dense head. Returns the specs and the input shape.
pub fn random_composition(depth: usize, rng: &mut impl Rng) -> (Vec<(String, LayerSpec)>, Vec<usize>) {
    let b = rng.random_range(2..4);
    let t = rng.random_range(6..10);
    let c0 = 2 * rng.random_range(1..3);
    let mut c = c0;
    let mut specs = Vec::new();
    let body = rng.random_range(1..depth);
    for i in 0..body {
        let spec = match rng.random_range(0..7) {
            0 => {
                let out = 2 * rng.random_range(1..3);
                let s = LayerSpec::Conv1d { in_channels: c, out_channels: out, kernel: 3, dilation: rng.random_range(1..3), stride: 1, padding: Padding::Same };
                c = out;
                s
            }
            1 => {
                let out = 2 * rng.random_range(1..3);
                let s = LayerSpec::DilatedTdnnBlock { in_channels: c, out_channels: out, kernel: 3, dilation: rng.random_range(1..4) };
                c = out;
                s
            }
            2 => LayerSpec::SeBlock { channels: c, bottleneck: 2 },
            3 => LayerSpec::Batchnorm { channels: c },
            4 => LayerSpec::Sigmoid,
            5 if c % 2 == 0 => {
                c /= 2;
                LayerSpec::Mfm
            }
            _ => LayerSpec::Relu,
        };
        specs.push((format!("l{i}"), spec));
    }
    let head = match rng.random_range(0..3) {
        0 => LayerSpec::AttentiveStatsPool { channels: c, attention_dim: 2 },
        1 => LayerSpec::MeanPool,
        _ => LayerSpec::Dense { in_features: c * t, out_features: 3 },
    };
    specs.push(("head".to_string(), head));
    (specs, vec![b, c0, t])
}
