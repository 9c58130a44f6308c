use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use iterbank::refparser::{decode_with, predict, train};
use iterbank_bench::{corpus, random_table, rng};

fn decode(c: &mut Criterion) {
    let mut group = c.benchmark_group("decode");
    for n in [10, 30, 60] {
        let table = random_table(&mut rng(n as u64), n, 8);
        group.bench_with_input(BenchmarkId::new("single_root", n), &table, |b, t| {
            b.iter(|| decode_with(t, true))
        });
        group.bench_with_input(BenchmarkId::new("multi_root", n), &table, |b, t| {
            b.iter(|| decode_with(t, false))
        });
    }
    group.finish();
}

fn parse_corpus(c: &mut Criterion) {
    let tb = corpus();
    let model = train(&tb, 2, 0, None).expect("training succeeds");
    c.bench_function("predict/300 sentences", |b| b.iter(|| predict(&model, &tb)));
}

criterion_group!(benches, decode, parse_corpus);
criterion_main!(benches);
