mod common;

use proptest::prelude::*;
use vocalid::models::{cosine_lr, discriminator_specs, embedder_specs, ModelKind, TrainConfig};
use vocalid::models::{DiscriminatorArch, EmbedderArch};
use vocalid::nn::archive::fingerprint_of;
use vocalid::nn::{AdamW, LayerSpec, Mode, Network, ParamKind, Tensor, WeightArchive};
use vocalid::Error;

fn single(spec: LayerSpec) -> Network<f64> {
    Network::build(&[("layer".to_string(), spec)], &mut common::rng(0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 5), 1..6),
        c in -100.0f64..100.0,
    ) {
        let net = single(LayerSpec::Softmax);
        let flat: Vec<f64> = rows.concat();
        let x = Tensor::new(vec![rows.len(), 5], flat.clone()).unwrap();
        let shifted = Tensor::new(vec![rows.len(), 5], flat.iter().map(|v| v + c).collect()).unwrap();
        let y = net.infer(&x).unwrap();
        let ys = net.infer(&shifted).unwrap();
        for r in y.data().chunks(5) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for (a, b) in y.data().iter().zip(ys.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_with_batch_stats_standardises(seed in any::<u64>(), batch in 4usize..12, scale in 1.0f64..5.0) {
        let mut rng = common::rng(seed);
        let mut net = single(LayerSpec::Batchnorm { channels: 3 });
        let mut x = common::random_tensor(&[batch, 3, 7], &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v *= scale * 4.0);
        let per_channel = |ch: usize| -> Vec<f64> {
            (0..batch).flat_map(|b| (0..7).map(move |t| (b, t))).map(|(b, t)| x.data()[(b * 3 + ch) * 7 + t]).collect()
        };
        let stats: Vec<(f64, f64)> = (0..3)
            .map(|ch| {
                let v = per_channel(ch);
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (m, v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64)
            })
            .collect();
        net.visit_mut(&mut |name, t, _| {
            if name.ends_with("running_mean") {
                t.data_mut().iter_mut().zip(&stats).for_each(|(d, s)| *d = s.0);
            } else if name.ends_with("running_var") {
                t.data_mut().iter_mut().zip(&stats).for_each(|(d, s)| *d = s.1);
            }
        });
        let y = net.infer(&x).unwrap();
        for ch in 0..3 {
            let v: Vec<f64> = (0..batch).flat_map(|b| (0..7).map(move |t| (b, t))).map(|(b, t)| y.data()[(b * 3 + ch) * 7 + t]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
            prop_assert!(m.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-5, "var {}", var);
        }
    }

    #[test]
    fn cosine_schedule_never_increases(total in 1usize..5000, start in 1e-6f64..1e-1, ratio in 0.0f64..1.0) {
        let cfg = TrainConfig { lr_start: start, lr_end: start * ratio, ..TrainConfig::desk(ModelKind::Embedder) };
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by((total / 200).max(1)).chain([total]) {
            let lr = cosine_lr(step, total, &cfg).unwrap();
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert!((cosine_lr(0, total, &cfg).unwrap() - start).abs() <= 1e-15 * start);
        prop_assert!((cosine_lr(total, total, &cfg).unwrap() - start * ratio).abs() <= 1e-12 * start);
    }

    #[test]
    fn random_networks_round_trip_through_archives(seed in any::<u64>(), depth in 2usize..5) {
        let mut rng = common::rng(seed);
        let (specs, _) = common::random_composition(depth, &mut rng);
        let mut net: Network<f32> = Network::build(&specs, &mut rng).unwrap();
        net.visit_mut(&mut |_, t, _| t.data_mut().iter_mut().for_each(|v| *v += 0.25));
        let bytes = WeightArchive::from_network(&net).encode();
        let decoded = WeightArchive::decode(&bytes).unwrap();
        prop_assert_eq!(&decoded.encode(), &bytes);
        prop_assert_eq!(decoded.fingerprint(), fingerprint_of(&bytes));
        let mut fresh: Network<f32> = Network::build(&specs, &mut common::rng(seed ^ 1)).unwrap();
        decoded.apply_to(&mut fresh).unwrap();
        prop_assert_eq!(fresh.snapshot(), net.snapshot());
    }

    #[test]
    fn corrupted_archives_are_rejected(seed in any::<u64>(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut rng = common::rng(seed);
        let (specs, _) = common::random_composition(2, &mut rng);
        let net: Network<f32> = Network::build(&specs, &mut rng).unwrap();
        let mut bytes = WeightArchive::from_network(&net).encode();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(matches!(WeightArchive::decode(&bytes), Err(Error::CorruptArchive(_))));
        let cut = pos.index(bytes.len());
        prop_assert!(WeightArchive::decode(&bytes[..cut]).is_err());
    }
}

#[test]
fn forward_passes_are_deterministic() {
    let mut rng = common::rng(3);
    let d: Network<f32> = Network::build(&discriminator_specs(&DiscriminatorArch::default()).unwrap(), &mut rng).unwrap();
    let s: Network<f32> = Network::build(&embedder_specs(&EmbedderArch::default(), 4).unwrap(), &mut rng).unwrap();
    let xd = common::random_tensor(&[2, 1, 80, 120], &mut rng).cast::<f32>();
    let xs = common::random_tensor(&[2, 80, 120], &mut rng).cast::<f32>();
    assert_eq!(d.infer(&xd).unwrap().data(), d.infer(&xd).unwrap().data());
    assert_eq!(s.infer(&xs).unwrap().data(), s.infer(&xs).unwrap().data());
}

/// A small AdamW step on `0.5 * |W x|^2` lowers the loss.
#[test]
fn optimizer_step_descends_on_a_quadratic() {
    let mut rng = common::rng(9);
    let mut net: Network<f64> =
        Network::build(&[("fc".to_string(), LayerSpec::Dense { in_features: 6, out_features: 4 })], &mut rng).unwrap();
    let x = common::random_tensor(&[8, 6], &mut rng);
    let loss = |net: &Network<f64>| net.infer(&x).unwrap().data().iter().map(|v| 0.5 * v * v).sum::<f64>();
    let mut opt = AdamW::new(0.0);
    for lr in [1e-3, 1e-4, 1e-5] {
        let before = loss(&net);
        net.zero_grad();
        let y = net.forward(&x, Mode::Train).unwrap();
        net.backward(&y).unwrap();
        opt.step(&mut net, lr);
        assert!(loss(&net) < before, "lr {lr}");
    }
    let mut trainable = 0;
    net.visit(&mut |_, _, k| trainable += usize::from(k == ParamKind::Trainable));
    assert_eq!(trainable, 2);
}
