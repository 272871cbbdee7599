use criterion::{criterion_group, criterion_main, Criterion};

fn placeholder(_c: &mut Criterion) {
    // Real benchmarks land with the pipeline modules.
}

criterion_group!(benches, placeholder);
criterion_main!(benches);
