use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gcdn::autodiff::Tape;
use gcdn::graph_builder::{build_graph_infer, build_graph_train};
use gcdn::graph_conv::{init_ecc, nonlocal_aggregate, EccShape, DEFAULT_CHUNK_PIXELS};
use gcdn::network::{build_network, ModelConfig};
use gcdn::noise::add_awgn;
use gcdn::par;
use gcdn::synthetic::synthetic_scene;
use gcdn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PATHS: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn features(b: usize, h: usize, w: usize, f: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Tensor::from_fn(&[b, h, w, f], |_| rng.random_range(-1.0..1.0))
}

fn graph_building(c: &mut Criterion) {
    let x = features(4, 32, 32, 16);
    let mut g = c.benchmark_group("knn_graph");
    for (label, seq) in PATHS {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::new("train_32x32", label), |b| b.iter(|| build_graph_train(&x, 8).unwrap()));
        let big = features(1, 64, 64, 16);
        g.bench_function(BenchmarkId::new("infer_64x64_w21", label), |b| {
            b.iter(|| build_graph_infer(&big, 8, 21).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn aggregation(c: &mut Criterion) {
    let x = features(4, 24, 24, 16);
    let graphs = build_graph_train(&x, 8).unwrap();
    let shape = EccShape::new(16, 16, 4, 4, 10.0);
    let p = init_ecc::<f32>(shape, 1).unwrap();
    let mut g = c.benchmark_group("nonlocal_aggregate");
    for (label, seq) in PATHS {
        par::set_sequential(seq);
        g.bench_function(label, |b| {
            b.iter(|| {
                let tape = Tape::no_grad();
                let vars = p.bind(&tape);
                nonlocal_aggregate(&tape, &tape.constant(x.clone()), &graphs, &shape, &vars, DEFAULT_CHUNK_PIXELS)
                    .unwrap()
            })
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn denoise(c: &mut Criterion) {
    let cfg = ModelConfig { features: 24, branch_features: 8, lpf_blocks: 1, knn: 4, window: 11, ..ModelConfig::desk() };
    let model = build_network::<f32>(&cfg, 3).unwrap();
    let img = add_awgn(&synthetic_scene(32, 32, 4), 25.0, 5).unwrap();
    let mut g = c.benchmark_group("denoise_32x32");
    g.sample_size(10);
    for (label, seq) in PATHS {
        par::set_sequential(seq);
        g.bench_function(label, |b| b.iter(|| model.denoise(&img, DEFAULT_CHUNK_PIXELS).unwrap()));
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, graph_building, aggregation, denoise);
criterion_main!(benches);
