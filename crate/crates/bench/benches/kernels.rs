use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nucseg_core::arch::{self, ArchOptions};
use nucseg_core::metrics::{self, Connectivity};
use nucseg_core::tensor::{Graph, Padding};
use nucseg_core::{InstanceLabelMap, ModelKind, Network, Tensor, ThresholdSweep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 64, 64, 16]);
    let w = random(&mut rng, &[3, 3, 16, 16]);
    c.bench_function("conv2d 2×64×64×16 → 16, forward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
            black_box(g.conv2d(xv, wv, None, 1, Padding::Same).unwrap());
        })
    });
    c.bench_function("conv2d 2×64×64×16 → 16, forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (xv, wv) = (g.leaf(x.clone(), true), g.leaf(w.clone(), true));
            let y = g.conv2d(xv, wv, None, 1, Padding::Same).unwrap();
            let loss = g.sum(y).unwrap();
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn network(c: &mut Criterion) {
    for model in [ModelKind::Unet, ModelKind::Denseunet] {
        let spec = arch::build(model, &ArchOptions::new(8)).unwrap();
        let [h, w, ch] = spec.input_shape;
        let mut net = Network::new(spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[1, h, w, ch]);
        c.bench_function(&format!("{} scale 8 inference", model.display_name()), |b| {
            b.iter_batched(|| x.clone(), |x| black_box(net.infer(x).unwrap()), BatchSize::SmallInput)
        });
    }
}

fn scoring(c: &mut Criterion) {
    let (h, w) = (256, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Smooth blobs so components are realistic rather than single pixels.
    let centres: Vec<(f32, f32)> = (0..40)
        .map(|_| (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32)))
        .collect();
    let prob: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f32, (i % w) as f32);
            let d = centres.iter().map(|&(cy, cx)| (y - cy).powi(2) + (x - cx).powi(2)).fold(f32::MAX, f32::min);
            (-d / 60.0).exp()
        })
        .collect();
    c.bench_function("connected components 256×256", |b| {
        b.iter(|| black_box(metrics::connected_components(&prob, h, w, 0.5, Connectivity::Eight).unwrap()))
    });
    let pred = metrics::connected_components(&prob, h, w, 0.5, Connectivity::Eight).unwrap();
    let shifted: Vec<u32> = (0..h * w)
        .map(|i| if i % w == 0 { 0 } else { pred.labels()[i - 1] })
        .collect();
    let gt = InstanceLabelMap::new(h, w, shifted).unwrap();
    let sweep = ThresholdSweep::default();
    c.bench_function("map_image 256×256", |b| {
        b.iter(|| black_box(metrics::map_image(&pred, &gt, &sweep).unwrap()))
    });
}

criterion_group!(benches, conv, network, scoring);
criterion_main!(benches);
