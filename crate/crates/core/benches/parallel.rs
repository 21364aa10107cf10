use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use curvewalk::analysis::{random_sweep, ProbeConfig};
use curvewalk::dataio::{sample_shape, synth_shapes, ShapeKind, Split};
use curvewalk::geometry::knn;
use curvewalk::model::{evaluate, CurveNet, CurveNetConfig, HeadSpec};
use curvewalk::walk::PolicyKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

fn pools() -> Vec<(String, ThreadPool)> {
    // the wide pool gets at least two workers so both arms exist on a single core
    let full = std::thread::available_parallelism().map_or(1, |n| n.get()).max(2);
    [1, full]
        .into_iter()
        .map(|t| (format!("{t}-threads"), rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap()))
        .collect()
}

fn knn_rows(c: &mut Criterion) {
    let coords = sample_shape(ShapeKind::Torus, 1024, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().coords;
    let mut g = c.benchmark_group("knn-1024-k20");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| pool.install(|| b.iter(|| knn(&coords, 20, true).unwrap())));
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let coords = sample_shape(ShapeKind::Sphere, 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().coords;
    let cfg = ProbeConfig { n: 8, l: 30, k: 8, policy: PolicyKind::MomentumSuppression, ..Default::default() };
    let mut g = c.benchmark_group("curve-sweep-8-seeds");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| random_sweep(&coords, &cfg, 8).unwrap()))
        });
    }
    g.finish();
}

fn batch_eval(c: &mut Criterion) {
    let p = 128;
    let model = CurveNet::new(CurveNetConfig::toy(HeadSpec::Classify { classes: 4, hidden: 64 }, p), 0).unwrap();
    let data = synth_shapes(&ShapeKind::ALL, 2, p, 0, Split::Test).unwrap().clouds;
    let mut g = c.benchmark_group("eval-8-clouds");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| evaluate(&model, &data, 1, 0).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, knn_rows, seed_sweep, batch_eval);
criterion_main!(benches);
