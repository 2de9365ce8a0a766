use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use frog_core::deform::{DeformationField, FieldConfig, OpacityMode};
use frog_core::gaussian::GaussianCloud;
use frog_core::loss::build_knn;
use frog_core::par;
use frog_core::pipeline::Model;
use frog_core::raster::{render_cloud, Camera};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(n: usize) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = FieldConfig::default();
    let mut cloud = GaussianCloud::new(cfg.sh_degree, cfg.embed_dim);
    let sh_len = 3 * (cfg.sh_degree + 1) * (cfg.sh_degree + 1);
    for _ in 0..n {
        let p = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        let ls = [0; 3].map(|_| rng.random_range(-4.0..-2.5));
        let sh: Vec<f64> = (0..sh_len).map(|_| rng.random_range(-0.5..0.5)).collect();
        let e: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        cloud.push_raw(p, ls, [1.0, 0.0, 0.0, 0.0], rng.random_range(-2.0..2.0), &sh, &e);
    }
    let field = DeformationField::new(&cfg, &mut rng).unwrap();
    Model::new(cloud, field, OpacityMode::aggressive(10.0)).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn bench(c: &mut Criterion) {
    let m = model(20_000);
    let cam = Camera::look_at([0.0, -3.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0], 120.0, 128, 128).unwrap();
    let (_, _, deformed) = m.deform_at(0.3, false).unwrap();

    let mut g = c.benchmark_group("deform");
    g.sample_size(10);
    for (name, seq) in modes() {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| m.deform_at(0.3, false).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("render");
    g.sample_size(10);
    for (name, seq) in modes() {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| render_cloud(&deformed, &cam, false)));
    }
    g.finish();

    let knn_points = &m.cloud.positions[..3 * 5000];
    let mut g = c.benchmark_group("knn");
    g.sample_size(10);
    for (name, seq) in modes() {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| build_knn(knn_points, 20, 2000.0, 0).unwrap()));
    }
    g.finish();
    par::set_sequential(false);
}

criterion_group!(benches, bench);
criterion_main!(benches);
