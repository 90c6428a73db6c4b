use criterion::{black_box, criterion_group, criterion_main, Criterion};
use microcrack::mda::geodesic_embed;
use microcrack::model::{Model, ModelConfig};
use microcrack::nn::{AttentionConfig, Mode, ParamStore, TemporalAttention};
use microcrack::wavegen::{PlateSpec, Simulation, Source};
use microcrack::{Graph, LossConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = tensor(&mut rng, &[8, 16, 250, 81]);
    let w = tensor(&mut rng, &[32, 16, 3, 1]);
    c.bench_function("conv2d 16→32 k3 on 250×81, batch 8, forward+backward", |b| {
        b.iter(|| {
            let g = Graph::new();
            let y = g.leaf(&x).conv2d(g.leaf(&w), None, (1, 1), (1, 0)).unwrap();
            black_box(g.backward(y.sum()).unwrap());
        })
    });
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let att = TemporalAttention::new(&mut store, &mut rng, "attn", AttentionConfig { channels: 64 });
    let x = tensor(&mut rng, &[1, 64, 62, 81]);
    c.bench_function("temporal attention C=64 T=62 S=81 forward", |b| {
        b.iter(|| {
            let g = Graph::new();
            let p = store.bind(&g, false);
            black_box(att.forward(&p, g.leaf(&x)).unwrap().to_vec());
        })
    });
}

fn training_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(ModelConfig::micro()).unwrap();
    let x = tensor(&mut rng, &[8, 2, 80, 81]);
    let y: Vec<f64> = (0..8 * 1296).map(|_| f64::from(rng.gen_bool(0.05))).collect();
    let loss = LossConfig::default();
    c.bench_function("micro model train step, batch 8", |b| {
        b.iter(|| {
            let g = Graph::new();
            let f = model.forward(&g, g.leaf(&x), Mode::Train).unwrap();
            let l = loss.loss(f.output, &y).unwrap();
            black_box(g.backward(l).unwrap());
        })
    });
}

fn wave(c: &mut Criterion) {
    let p = PlateSpec::default();
    c.bench_function("wave simulator, 100 steps on 144×144", |b| {
        b.iter(|| {
            let mut sim = Simulation::new(&p, p.speed, &[], Source::default()).unwrap();
            for _ in 0..100 {
                sim.step();
            }
            black_box(sim.energy());
        })
    });
}

fn embed(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..32).map(|_| rng.gen::<f64>()).collect()).collect();
    c.bench_function("geodesic embedding, 200 points in 32 dims", |b| {
        b.iter(|| black_box(geodesic_embed(&x, 10).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, attention, training_step, wave, embed
}
criterion_main!(benches);
