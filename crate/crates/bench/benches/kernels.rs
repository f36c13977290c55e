use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use embedclust::cluster::{kmeans_init, KMeansConfig};
use embedclust::data::BlobSpec;
use embedclust::metrics::hungarian;
use embedclust::{DenseMatrix, Rng};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = Rng::new(1);
    for n in [64, 256] {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.normal());
        let b = DenseMatrix::from_fn(n, n, |_, _| rng.normal());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| a.matmul(&b).unwrap());
        });
    }
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    let mut rng = Rng::new(2);
    for k in [10, 50] {
        let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.uniform()).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(k), &cost, |bench, cost| {
            bench.iter(|| hungarian(cost).unwrap());
        });
    }
}

fn kmeans(c: &mut Criterion) {
    let data = BlobSpec::standard().generate(&mut Rng::new(3)).unwrap();
    let config = KMeansConfig::new(4);
    c.bench_function("kmeans/blobs-800x16", |bench| {
        bench.iter(|| kmeans_init(data.samples(), &config, &mut Rng::new(4)).unwrap());
    });
}

criterion_group!(benches, matmul, assignment, kmeans);
criterion_main!(benches);
