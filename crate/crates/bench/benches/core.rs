use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use jointvae_core::autodiff::{Tape, Tensor};
use jointvae_core::data::synth_shapes;
use jointvae_core::eval::{factor_metric, FactorMetricOptions};
use jointvae_core::model::{LatentNoise, Model};
use jointvae_core::objective::forward_loss;
use jointvae_core::train::{preset, AdamState, ObjectiveKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[64, 32, 16, 16], &mut rng);
    let w = random(&[32, 32, 4, 4], &mut rng);
    let b = random(&[32], &mut rng);
    c.bench_function("conv2d forward 64x32x16x16", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
            tape.conv2d(xv, wv, bv).unwrap()
        })
    });
    c.bench_function("conv2d forward+backward 64x32x16x16", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone().with_grad());
            let wv = tape.leaf(w.clone().with_grad());
            let bv = tape.leaf(b.clone().with_grad());
            let y = tape.conv2d(xv, wv, bv).unwrap();
            let s = tape.sum_all(y).unwrap();
            tape.backward(s).unwrap();
        })
    });
    let wt = random(&[32, 32, 4, 4], &mut rng);
    let xt = random(&[64, 32, 8, 8], &mut rng);
    c.bench_function("conv2d_transpose forward+backward 64x32x8x8", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(xt.clone().with_grad());
            let wv = tape.leaf(wt.clone().with_grad());
            let bv = tape.leaf(b.clone().with_grad());
            let y = tape.conv2d_transpose(xv, wv, bv).unwrap();
            let s = tape.sum_all(y).unwrap();
            tape.backward(s).unwrap();
        })
    });
}

fn train_step(c: &mut Criterion) {
    let p = preset("synth").unwrap();
    let kind = ObjectiveKind::Joint;
    let model: Model<f32> = Model::build(p.model_config(kind).unwrap(), 0).unwrap();
    let mode = p.objective(kind);
    let spec = model.latent_spec().clone();
    let data = synth_shapes(1, 0);
    let idx: Vec<usize> = (0..64).collect();
    let x = data.batch(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = LatentNoise::draw(&mut rng, 64, &spec);
    c.bench_function("train step batch 64 synth preset", |bench| {
        bench.iter_batched(
            || (model.clone(), AdamState::new(&model)),
            |(mut m, mut adam)| {
                let mut tape = Tape::new();
                let bound = m.bind(&mut tape, true);
                let xv = tape.constant(x.clone());
                let pass = forward_loss(&m, &mut tape, &bound, xv, &noise, &mode, 100).unwrap();
                tape.backward(pass.total).unwrap();
                let grads: Vec<&[f32]> = bound.vars().iter().map(|&v| tape.grad(v).unwrap()).collect();
                adam.update(&mut m, &grads, 5e-4).unwrap();
            },
            BatchSize::LargeInput,
        )
    });
}

fn metric(c: &mut Criterion) {
    let p = preset("synth").unwrap();
    let model: Model<f32> = Model::build(p.model_config(ObjectiveKind::Joint).unwrap(), 0).unwrap();
    let data = synth_shapes(1, 0);
    let opts = FactorMetricOptions::default();
    let mut group = c.benchmark_group("eval");
    group.sample_size(10);
    group.bench_function("factor_metric 768 images 800 votes", |bench| bench.iter(|| factor_metric(&model, &data, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, conv, train_step, metric);
criterion_main!(benches);
