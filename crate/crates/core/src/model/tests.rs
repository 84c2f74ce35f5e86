use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{gradient_check, GradCheckOptions};
use crate::objective::{forward_loss, CapacitySchedule, ObjectiveMode};

fn mnist_config() -> ModelConfig {
    ModelConfig::new([1, 32, 32], LatentSpec::new(10, vec![10])).unwrap()
}

fn celeba_config() -> ModelConfig {
    ModelConfig::new([3, 64, 64], LatentSpec::new(32, vec![10])).unwrap()
}

fn random_images(rng: &mut ChaCha8Rng, batch: usize, shape: [usize; 3]) -> Tensor<f32> {
    let n = batch * shape.iter().product::<usize>();
    let data = (0..n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![batch, shape[0], shape[1], shape[2]], data).unwrap()
}

#[test]
fn small_preset_layout() {
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    let conv_out: Vec<usize> = (0..3)
        .map(|i| model.param(&format!("encoder.conv{i}.weight")).unwrap().shape()[0])
        .collect();
    assert_eq!(conv_out, vec![32, 32, 64]);
    assert!(model.param("encoder.conv3.weight").is_none());
    assert_eq!(model.latent_spec().latent_len(), 20);
    assert_eq!(model.param("decoder.hidden.weight").unwrap().shape(), &[20, 256]);
    assert_eq!(model.param("encoder.logits0.weight").unwrap().shape(), &[256, 10]);
    assert_eq!(model.param("decoder.deconv2.weight").unwrap().shape(), &[32, 1, 4, 4]);
}

#[test]
fn large_preset_decodes_to_image_shape() {
    let model = Model::<f32>::build(celeba_config(), 3).unwrap();
    assert_eq!(model.param("encoder.conv3.weight").unwrap().shape(), &[64, 64, 4, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let latent: Vec<f64> = (0..2 * 42).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let out = model.decode_f64(&latent).unwrap();
    assert_eq!(out.shape(), &[2, 3, 64, 64]);
    assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn unsupported_size_rejected() {
    let err = ModelConfig::new([1, 28, 28], LatentSpec::new(4, vec![])).unwrap_err();
    assert!(err.to_string().contains("28"), "{err}");
    assert!(ModelConfig::new([1, 32, 64], LatentSpec::new(4, vec![])).is_err());
    assert!(ModelConfig::new([1, 32, 32], LatentSpec::new(0, vec![])).is_err());
    assert!(ModelConfig::new([1, 32, 32], LatentSpec::new(2, vec![1])).is_err());
}

#[test]
fn initialization_is_deterministic() {
    let a = Model::<f32>::build(mnist_config(), 7).unwrap();
    let b = Model::<f32>::build(mnist_config(), 7).unwrap();
    let c = Model::<f32>::build(mnist_config(), 8).unwrap();
    for ((_, x), (_, y)) in a.params().iter().zip(b.params()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
    assert_ne!(a, c);
}

#[test]
fn initialization_ranges_follow_fan_in() {
    let model = Model::<f32>::build(mnist_config(), 2).unwrap();
    let max_abs = |name: &str| {
        model
            .param(name)
            .unwrap()
            .data()
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs())) as f64
    };
    let relu_limit = (6.0f64 / 16.0).sqrt();
    assert!(max_abs("encoder.conv0.weight") <= relu_limit);
    assert!(max_abs("encoder.conv0.weight") > 0.9 * relu_limit);
    let head_limit = (3.0f64 / 256.0).sqrt();
    assert!(max_abs("encoder.mu.weight") <= head_limit);
    assert!(max_abs("encoder.mu.weight") > 0.9 * head_limit);
    assert!(model.param("encoder.mu.bias").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn encode_shapes_and_finiteness() {
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    let zeros = Tensor::zeros(vec![3, 1, 32, 32]);
    let p = model.encode(&zeros).unwrap();
    assert_eq!(p.batch, 3);
    assert_eq!(p.gaussian.mu.len(), 3 * 10);
    assert_eq!(p.concretes.len(), 1);
    assert_eq!(p.concretes[0].logits.len(), 3 * 10);
    assert!(p.gaussian.mu.iter().chain(&p.gaussian.logvar).all(|v| v.is_finite()));
}

#[test]
fn single_pixel_changes_posterior() {
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_images(&mut rng, 1, [1, 32, 32]);
    let base = model.encode(&x).unwrap();
    for &pixel in &[0usize, 16 * 32 + 16, 1023] {
        let mut y = x.clone();
        y.data_mut()[pixel] = 1.0 - y.data()[pixel];
        let moved = model.encode(&y).unwrap();
        let diff: f64 = base
            .gaussian
            .mu
            .iter()
            .zip(&moved.gaussian.mu)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0, "pixel {pixel} has no effect");
    }
}

#[test]
fn encode_rejects_wrong_shape() {
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    let err = model.encode(&Tensor::zeros(vec![1, 1, 64, 64])).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    let err = model.decode_f64(&[0.0; 19]).unwrap_err();
    assert!(err.to_string().contains("20"), "{err}");
}

fn zero_heads(model: &mut Model<f32>) {
    for (name, t) in model.params_mut() {
        if name.starts_with("encoder.mu") || name.starts_with("encoder.logvar") || name.starts_with("encoder.logits") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn mean_mode_with_uniform_posterior() {
    let config = ModelConfig::new([1, 32, 32], LatentSpec::new(3, vec![4])).unwrap();
    let mut model = Model::<f32>::build(config, 0).unwrap();
    zero_heads(&mut model);
    let p = model.encode(&Tensor::zeros(vec![1, 1, 32, 32])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = sample_latent(&p, SampleMode::Mean, &mut rng).unwrap();
    assert_eq!(z, vec![0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]);
}

fn synthetic_posterior(rng: &mut ChaCha8Rng, batch: usize, d: usize, dims: &[usize], temperature: f64) -> PosteriorParams {
    PosteriorParams {
        batch,
        gaussian: GaussianBatch {
            dim: d,
            mu: (0..batch * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            logvar: (0..batch * d).map(|_| rng.gen_range(-3.0..1.0)).collect(),
        },
        concretes: dims
            .iter()
            .map(|&n| ConcreteBatch {
                categories: n,
                logits: (0..batch * n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                temperature,
            })
            .collect(),
    }
}

#[test]
fn stochastic_sampling_reproducible_and_on_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = synthetic_posterior(&mut rng, 4, 3, &[2, 5], 0.67);
    let a = sample_latent(&p, SampleMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = sample_latent(&p, SampleMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let z = sample_latent(&p, SampleMode::Stochastic, &mut draw_rng).unwrap();
        assert_eq!(z.len(), 4 * 10);
        for row in z.chunks(10) {
            for block in [&row[3..5], &row[5..10]] {
                let s: f64 = block.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(block.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}

/// Stochastic average over `draws` samples vs mean mode, in units of the standard error.
fn mean_mode_z_scores(p: &PosteriorParams, draws: usize, seed: u64) -> Vec<f64> {
    let mean = sample_latent(p, SampleMode::Mean, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; mean.len()];
    let mut sum_sq = vec![0.0; mean.len()];
    for _ in 0..draws {
        let z = sample_latent(p, SampleMode::Stochastic, &mut rng).unwrap();
        for (k, v) in z.iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let n = draws as f64;
    mean.iter()
        .enumerate()
        .map(|(k, &m)| {
            let avg = sum[k] / n;
            let var = (sum_sq[k] / n - avg * avg).max(0.0);
            let se = (var / n).sqrt().max(1e-12);
            (avg - m).abs() / se
        })
        .collect()
}

#[test]
fn mean_mode_is_the_expectation_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // continuous units at arbitrary parameters
    let p = synthetic_posterior(&mut rng, 2, 6, &[], 0.67);
    let z = mean_mode_z_scores(&p, 10_000, 1);
    assert!(z.iter().all(|&s| s < 3.0), "{z:?}");

    // relaxed categorical at the default temperature, symmetric logits
    let mut p = synthetic_posterior(&mut rng, 2, 0, &[4], 0.67);
    p.concretes[0].logits.iter_mut().for_each(|v| *v = 0.3);
    let z = mean_mode_z_scores(&p, 10_000, 2);
    assert!(z.iter().all(|&s| s < 3.0), "{z:?}");

    // asymmetric logits: relaxed samples concentrate on one-hot vectors drawn
    // with probability softmax(logits) as the temperature goes to zero
    let p = synthetic_posterior(&mut rng, 2, 0, &[4], 0.01);
    let z = mean_mode_z_scores(&p, 10_000, 3);
    assert!(z.iter().all(|&s| s < 3.0), "{z:?}");
}

#[test]
fn shapes_survive_the_round_trip() {
    for (config, seed) in [(mnist_config(), 0u64), (celeba_config(), 1)] {
        let model = Model::<f32>::build(config.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_images(&mut rng, 2, config.image_shape);
        let p = model.encode(&x).unwrap();
        let z = sample_latent(&p, SampleMode::Stochastic, &mut rng).unwrap();
        let out = model.decode_f64(&z).unwrap();
        assert_eq!(out.shape(), x.shape());
    }
}

#[test]
fn full_forward_and_loss_gradient_check() {
    let config = ModelConfig::new([1, 32, 32], LatentSpec::new(4, vec![3])).unwrap();
    let mut model: Model<f64> = Model::<f32>::build(config.clone(), 4).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Zero biases put every all-zero patch exactly on a relu kink, where the
    // loss has no derivative; probe at a generic point instead.
    for (name, t) in model.params_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
    let pixels: Vec<f64> = (0..2 * 1024).map(|_| rng.gen_range(0.01..0.99)).collect();
    let x = Tensor::from_f64(vec![2, 1, 32, 32], &pixels).unwrap();
    let noise = LatentNoise::draw(&mut rng, 2, &config.latent_spec);
    let mode = ObjectiveMode::JointVae {
        schedule: CapacitySchedule {
            gamma: 30.0,
            cz_max: 5.0,
            cz_ramp_iters: 1000,
            cc_max: 5.0,
            cc_ramp_iters: 1000,
        },
    };
    let leaves: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    // a few thousand relu units: keep the probe narrower than the nearest kink
    let opts = GradCheckOptions {
        step: 1e-6,
        tolerance: 1e-4,
        max_coords_per_leaf: 6,
        seed: 3,
        kink_margin: None,
        skip_kink_crossings: false,
    };
    let report = gradient_check(
        |tape, vars| {
            let bound = model.bind_vars(vars.to_vec())?;
            let xv = tape.constant(x.clone());
            let pass = forward_loss(&model, tape, &bound, xv, &noise, &mode, 400)?;
            Ok(pass.total)
        },
        &leaves,
        &opts,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.probes > 100, "{}", report.probes);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::<f32>::build(mnist_config(), 11).unwrap();
    let state = TrainingState {
        iteration: 321,
        seed: 11,
        metadata: serde_json::json!({"objective": "joint"}),
        extra: vec![("adam.step".into(), Tensor::scalar(3.0))],
    };
    save_checkpoint(&path, &model, &state).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.model.config(), model.config());
    for ((na, a), (nb, b)) in model.params().iter().zip(loaded.model.params()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(loaded.state, state);
}

#[test]
fn corrupt_checkpoints_are_rejected_with_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    save_checkpoint(&path, &model, &TrainingState::default()).unwrap();
    let good = std::fs::read(&path).unwrap();

    let check = |bytes: Vec<u8>, needle: &str| {
        let err = checkpoint::parse_checkpoint(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Checkpoint { .. }), "{msg}");
        assert!(msg.contains(needle), "{msg} lacks {needle}");
        assert!(msg.contains("offset"), "{msg}");
    };

    let mut bad = good.clone();
    bad[0] = b'X';
    check(bad, "magic");
    let mut bad = good.clone();
    bad[4] = 9;
    check(bad, "version");
    let mut bad = good.clone();
    bad[12] = b'#';
    check(bad, "header");
    check(good[..good.len() - 10].to_vec(), "file ends");
    check(good[..20].to_vec(), "header declares");
    let mut longer = good.clone();
    longer.extend_from_slice(&[0, 0, 0, 0]);
    check(longer, "trailing");
}

#[test]
fn checkpoint_enforces_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::<f32>::build(mnist_config(), 0).unwrap();
    save_checkpoint(&path, &model, &TrainingState::default()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let err = loaded.model.encode(&Tensor::zeros(vec![1, 1, 64, 64])).unwrap_err();
    assert!(err.to_string().contains("64"), "{err}");
}


