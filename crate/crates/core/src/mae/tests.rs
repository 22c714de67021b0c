use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{Scalar, Tape, Tensor};
use crate::pipeline::{ChannelEpoch, EpochRecord, NormParams, SleepStage};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| alloc::format!("t{i}")).collect()
}

fn wave(n: usize, seed: u64) -> Vec<f32> {
    // Cheap deterministic pseudo-signal with no zero patches.
    (0..n)
        .map(|i| {
            let x = i as f64 * 0.37 + seed as f64 * 1.3;
            (libm::sin(x) + 0.5 * libm::cos(2.3 * x + seed as f64)) as f32
        })
        .collect()
}

fn encode_once<T: Scalar>(model: &MaeModel<T>, input: &[f32], plan: &MaskPlan) -> Tensor<T> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let tokens = tape.constant(patchify::<T>(input, &model.config).unwrap());
    let z = model.encode(&mut tape, &bound, tokens, plan).unwrap();
    tape.value(z).unwrap().clone()
}

fn record(input: Vec<f32>, targets: &[(&str, Vec<f32>)]) -> EpochRecord {
    let norm = NormParams {
        mean: 0.0,
        std: 1.0,
    };
    EpochRecord {
        subject_id: "s".into(),
        epoch_index: 0,
        stage: SleepStage::N2,
        input: ChannelEpoch {
            name: "in".into(),
            samples: input,
            norm,
        },
        targets: targets
            .iter()
            .map(|(n, s)| ChannelEpoch {
                name: (*n).into(),
                samples: s.clone(),
                norm,
            })
            .collect(),
    }
}

#[test]
fn patchify_slices_consecutive_patches() {
    let config = MaeConfig {
        target_channels: names(1),
        ..MaeConfig::default()
    };
    let x: Vec<f32> = (0..3000).map(|i| i as f32).collect();
    let tokens = patchify::<f32>(&x, &config).unwrap();
    assert_eq!(tokens.shape(), [30, 100]);
    assert_eq!(&tokens.data()[..100], &x[..100]);
    assert_eq!(&tokens.data()[2900..], &x[2900..]);
    assert_eq!(unpatchify(&tokens), x);

    let c = patchify::<f64>(&[0.25; 3000], &config).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.25));

    assert_eq!(
        patchify::<f32>(&x[..2999], &config),
        Err(MaeError::WrongLength {
            expected: 3000,
            got: 2999
        })
    );
}

#[test]
fn positional_table_matches_formula() {
    let config = MaeConfig {
        target_channels: names(1),
        ..MaeConfig::default()
    };
    let model = MaeModel::<f64>::init(config, 0).unwrap();
    let pe = &model.pos_encoding;
    assert_eq!(pe.shape(), [30, 64]);
    for t in 0..30 {
        for i in 0..32 {
            let denom = libm::pow(10000.0, (2 * i) as f64 / 64.0);
            assert_eq!(pe.data()[t * 64 + 2 * i], libm::sin(t as f64 / denom));
            assert_eq!(pe.data()[t * 64 + 2 * i + 1], libm::cos(t as f64 / denom));
        }
    }
}

#[test]
fn init_is_seeded_and_bounded() {
    let config = MaeConfig::tiny(names(2));
    let a = MaeModel::<f32>::init(config.clone(), 5).unwrap();
    let b = MaeModel::<f32>::init(config.clone(), 5).unwrap();
    let c = MaeModel::<f32>::init(config.clone(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params, c.params);
    let wide = MaeModel::<f64>::init(config.clone(), 5).unwrap();
    assert_eq!(wide.cast::<f32>(), a);

    let layout = MaeParams::layout(&config);
    for (slot, t) in layout.iter().zip(a.params.iter()) {
        assert_eq!(slot.shape, t.shape(), "{}", slot.name);
        match slot.kind {
            ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in } => {
                let bound = 1.0 / (fan_in as f32).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{}", slot.name);
            }
            ParamKind::NormGain => assert!(t.data().iter().all(|&v| v == 1.0)),
            ParamKind::NormBias => assert!(t.data().iter().all(|&v| v == 0.0)),
            ParamKind::MaskToken => assert!(t.data().iter().all(|v| v.abs() < 0.02 * 6.0)),
        }
    }
}

#[test]
fn from_params_rejects_wrong_shapes() {
    let config = MaeConfig::tiny(names(2));
    let model = MaeModel::<f32>::init(config.clone(), 0).unwrap();
    let mut params = model.params.clone();
    params.mask_token = Tensor::zeros(&[1, 3]);
    assert!(MaeModel::from_params(config.clone(), params).is_err());
    let mut fewer = config.clone();
    fewer.target_channels.pop();
    assert!(MaeModel::from_params(fewer, model.params.clone()).is_err());
    assert_eq!(
        MaeModel::from_params(config, model.params.clone()).unwrap(),
        model
    );
}

#[test]
fn shapes_for_default_config() {
    let config = MaeConfig {
        target_channels: vec!["EOG".into(), "EMG".into(), "EEG Pz-Oz".into()],
        ..MaeConfig::default()
    };
    let model = MaeModel::<f32>::init(config, 1).unwrap();
    let x = wave(3000, 1);
    let latents = encode_once(&model, &x, &MaskPlan::none(30));
    assert_eq!(latents.shape(), [30, 64]);
    let plan = make_mask(30, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(encode_once(&model, &x, &plan).shape(), [15, 64]);
    let rec = model.reconstruct(&x, &plan).unwrap();
    assert_eq!(rec.shape(), [3, 30, 100]);
    for k in 0..3 {
        assert_eq!(rec.data()[k * 3000..(k + 1) * 3000].len(), 3000);
    }
}

#[test]
fn masked_token_content_never_reaches_encoder() {
    let model = MaeModel::<f32>::init(MaeConfig::tiny(names(2)), 3).unwrap();
    let plan = make_mask(4, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
    let x = wave(40, 2);
    let mut y = x.clone();
    // Reverse and scale the content of each masked patch.
    for &m in &plan.masked_indices {
        let patch = &mut y[m * 10..(m + 1) * 10];
        patch.reverse();
        for v in patch.iter_mut() {
            *v = *v * -7.5 + 3.0;
        }
    }
    let a = encode_once(&model, &x, &plan);
    let b = encode_once(&model, &y, &plan);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

fn zero_block_weights<T: Scalar>(b: &mut Block<Tensor<T>>) {
    for lin in [
        &mut b.query,
        &mut b.value,
        &mut b.output,
        &mut b.fc1,
        &mut b.fc2,
    ] {
        lin.weight = Tensor::zeros(lin.weight.shape());
        lin.bias = Tensor::zeros(lin.bias.shape());
    }
    b.key = Tensor::zeros(b.key.shape());
}

#[test]
fn zero_blocks_leave_embedding_unchanged() {
    let mut model = MaeModel::<f64>::init(MaeConfig::tiny(names(2)), 4).unwrap();
    for b in &mut model.params.encoder {
        zero_block_weights(b);
    }
    let x = wave(40, 3);
    let plan = MaskPlan {
        visible_indices: vec![0, 3],
        masked_indices: vec![1, 2],
    };
    let z = encode_once(&model, &x, &plan);

    // Independent embedding: x_t · W + b + pos_t for visible t.
    let (w, bias) = (
        &model.params.patch_embed.weight,
        &model.params.patch_embed.bias,
    );
    for (row, &t) in plan.visible_indices.iter().enumerate() {
        for j in 0..8 {
            let mut e = bias.data()[j];
            for i in 0..10 {
                e += x[t * 10 + i] as f64 * w.data()[i * 8 + j];
            }
            e += model.pos_encoding.data()[t * 8 + j];
            assert!((z.data()[row * 8 + j] - e).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_decoder_and_heads_reconstruct_zero() {
    let mut model = MaeModel::<f32>::init(MaeConfig::tiny(names(3)), 4).unwrap();
    for b in &mut model.params.decoder {
        zero_block_weights(b);
    }
    for h in &mut model.params.heads {
        h.weight = Tensor::zeros(h.weight.shape());
        h.bias = Tensor::zeros(h.bias.shape());
    }
    let plan = make_mask(4, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
    let rec = model.reconstruct(&wave(40, 5), &plan).unwrap();
    assert_eq!(rec.shape(), [3, 4, 10]);
    assert!(rec.data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_is_permutation_equivariant() {
    let model = MaeModel::<f64>::init(MaeConfig::tiny(names(2)), 8).unwrap();
    let perm = [2usize, 0, 3, 1];
    let x = wave(40, 6);
    let mut xp = vec![0.0f32; 40];
    let mut permuted = model.clone();
    for (new, &old) in perm.iter().enumerate() {
        xp[new * 10..(new + 1) * 10].copy_from_slice(&x[old * 10..(old + 1) * 10]);
        permuted.pos_encoding.data_mut()[new * 8..(new + 1) * 8]
            .copy_from_slice(&model.pos_encoding.data()[old * 8..(old + 1) * 8]);
    }
    let plan = MaskPlan::none(4);
    let z = encode_once(&model, &x, &plan);
    let zp = encode_once(&permuted, &xp, &plan);
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..8 {
            assert!((zp.data()[new * 8 + j] - z.data()[old * 8 + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn every_parameter_gets_gradient() {
    for config in [
        MaeConfig::tiny(names(2)),
        MaeConfig {
            target_channels: names(3),
            ..MaeConfig::default()
        },
    ] {
        let model = MaeModel::<f32>::init(config.clone(), 11).unwrap();
        let n = config.epoch_len();
        let targets: Vec<Vec<f32>> = (0..3).map(|k| wave(n, 20 + k)).collect();
        let refs: Vec<&[f32]> = targets
            .iter()
            .take(config.num_targets())
            .map(Vec::as_slice)
            .collect();
        let plan = make_mask(
            config.seq_len,
            config.mask_ratio,
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let (_, grads) = model.loss_and_grads(&wave(n, 7), &refs, &plan).unwrap();
        let layout = MaeParams::layout(&config);
        for (slot, g) in layout.iter().zip(&grads) {
            assert!(
                g.iter().any(|&v| v != 0.0),
                "{} has zero gradient",
                slot.name
            );
        }
    }
}

#[test]
fn perfect_reconstruction_has_zero_loss() {
    let model = MaeModel::<f64>::init(MaeConfig::tiny(names(2)), 12).unwrap();
    let x = wave(40, 9);
    let plan = make_mask(4, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
    let rec = model.reconstruct(&x, &plan).unwrap();
    let t: Vec<Vec<f32>> = rec
        .data()
        .chunks(40)
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    let refs: Vec<&[f32]> = t.iter().map(Vec::as_slice).collect();
    let (loss, _) = model.loss_and_grads(&x, &refs, &plan).unwrap();
    assert!(loss.abs() < 1e-6, "{loss}");
}

#[test]
fn batch_gradient_is_mean_of_example_gradients() {
    let config = MaeConfig::tiny(vec!["a".into(), "b".into()]);
    let model = MaeModel::<f64>::init(config.clone(), 13).unwrap();
    let batch: Vec<EpochRecord> = (0..3)
        .map(|i| {
            record(
                wave(40, i),
                &[("b", wave(40, 10 + i)), ("a", wave(40, 20 + i))],
            )
        })
        .collect();
    let refs: Vec<&EpochRecord> = batch.iter().collect();
    let (loss, grads) = model
        .batch_loss_and_grads(&refs, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plans: Vec<MaskPlan> = (0..3).map(|_| make_mask(4, 0.5, &mut rng)).collect();
    let mut expect_loss = 0.0;
    let mut expect: Vec<Vec<f64>> = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    for (e, plan) in batch.iter().zip(&plans) {
        // Targets in config order, not record order.
        let t = [
            e.targets[1].samples.as_slice(),
            e.targets[0].samples.as_slice(),
        ];
        let (l, g) = model.loss_and_grads(&e.input.samples, &t, plan).unwrap();
        expect_loss += l / 3.0;
        for (acc, gi) in expect.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(gi) {
                *a += v / 3.0;
            }
        }
    }
    assert!((loss - expect_loss).abs() < 1e-12);
    for (a, b) in grads.iter().flatten().zip(expect.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn batch_errors() {
    let config = MaeConfig::tiny(vec!["a".into()]);
    let model = MaeModel::<f32>::init(config, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(
        model.forward_loss(&[], &mut rng).unwrap_err(),
        MaeError::EmptyBatch
    );
    let good = record(wave(40, 1), &[("a", wave(40, 2))]);
    let other = record(wave(40, 1), &[("z", wave(40, 2))]);
    assert_eq!(
        model.forward_loss(&[&other], &mut rng).unwrap_err(),
        MaeError::MissingTarget("a".into())
    );
    let mut renamed = good.clone();
    renamed.input.name = "other".into();
    assert_eq!(
        model
            .forward_loss(&[&good, &renamed], &mut rng)
            .unwrap_err(),
        MaeError::HeterogeneousBatch
    );
    let short = record(wave(39, 1), &[("a", wave(40, 2))]);
    assert!(matches!(
        model.forward_loss(&[&short], &mut rng),
        Err(MaeError::WrongLength {
            expected: 40,
            got: 39
        })
    ));
}

#[test]
fn masked_scope_ignores_visible_positions() {
    let mut config = MaeConfig::tiny(vec!["a".into()]);
    config.loss_scope = LossScope::Masked;
    let model = MaeModel::<f64>::init(config, 14).unwrap();
    let x = wave(40, 1);
    let plan = MaskPlan {
        visible_indices: vec![0, 1],
        masked_indices: vec![2, 3],
    };
    let mut t = wave(40, 2);
    let (a, _) = model.loss_and_grads(&x, &[&t], &plan).unwrap();
    for v in &mut t[..20] {
        *v = -*v * 3.0 + 1.0;
    }
    let (b, _) = model.loss_and_grads(&x, &[&t], &plan).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tiny_gradients_match_finite_differences() {
    for seed in 0..3 {
        let r = tiny_grad_check::<f64>(seed).unwrap();
        assert!(r.max_relative_error < 1e-5, "seed {seed}: {r:?}");
        assert_eq!(
            r.coordinates,
            MaeModel::<f64>::init(MaeConfig::tiny(names(2)), 0)
                .unwrap()
                .params
                .iter()
                .map(Tensor::len)
                .sum::<usize>()
        );
    }
    let r = tiny_grad_check::<f32>(0).unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_finite_and_in_range(seed in any::<u64>(), data_seed in 0u64..1000) {
        let model = MaeModel::<f32>::init(MaeConfig::tiny(names(2)), seed).unwrap();
        let plan = make_mask(4, 0.5, &mut ChaCha8Rng::seed_from_u64(data_seed));
        let (t0, t1) = (wave(40, data_seed + 1), wave(40, data_seed + 2));
        let (loss, grads) = model.loss_and_grads(&wave(40, data_seed), &[&t0, &t1], &plan).unwrap();
        prop_assert!(loss.is_finite() && (0.0..=2.0).contains(&loss));
        prop_assert!(grads.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn cosine_loss_is_scale_invariant(
        values in proptest::collection::vec(-100.0f64..100.0, 24),
        target in proptest::collection::vec(-100.0f64..100.0, 24),
        c in prop::sample::select(vec![1e-3, 1.0, 1e3]),
    ) {
        let p = Tensor::new(&[2, 3, 4], values.clone()).unwrap();
        let scaled = Tensor::new(&[2, 3, 4], values.iter().map(|v| v * c).collect()).unwrap();
        let t = Tensor::new(&[2, 3, 4], target).unwrap();
        let a = cosine_loss(&p, &t).unwrap();
        let b = cosine_loss(&scaled, &t).unwrap();
        prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
    }
}
