use criterion::{criterion_group, criterion_main, Criterion};
use embedclust::augment::TransformSpec;
use embedclust::data::{next_batch, BatchPlan, BlobSpec};
use embedclust::{Rng, TrainConfig, Trainer};

fn joint_step(c: &mut Criterion) {
    let data = BlobSpec::standard().generate(&mut Rng::new(5)).unwrap();
    let config = TrainConfig {
        warmup_epochs: 0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config.clone(), &data).unwrap();
    trainer.warmup_and_init(&data).unwrap();

    let mut rng = Rng::new(6);
    let mut plan = BatchPlan::new(data.len(), config.batch_size, true, &mut rng).unwrap();
    let spec = TransformSpec::vector_default();
    let batch = next_batch(&mut plan, &data, &spec, config.routing, &mut rng).unwrap().unwrap();

    let mut group = c.benchmark_group("train");
    group.sample_size(30);
    group.bench_function("joint-step/batch-64", |b| {
        b.iter(|| trainer.joint_step(&batch).unwrap());
    });
    group.sample_size(10);
    group.bench_function("epoch/blobs-800", |b| {
        b.iter(|| trainer.run_epoch(&data).unwrap());
    });
}

criterion_group!(benches, joint_step);
criterion_main!(benches);
