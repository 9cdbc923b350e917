use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use semvar_core::embedding::reference_embed;
use semvar_core::ssm::{build_ssm_with, standardize_with, Population};
use semvar_core::{EmbeddingMatrix, Execution, ModelId};

fn matrix(n: usize, dim: usize) -> EmbeddingMatrix {
    let rows = (0..n)
        .map(|i| reference_embed(&format!("sentence {i} about the {} winter", i % 97), dim))
        .collect();
    EmbeddingMatrix::from_rows(ModelId::new("bench").unwrap(), "bench", rows).unwrap()
}

fn ssm(c: &mut Criterion) {
    let mut group = c.benchmark_group("ssm");
    group.sample_size(10);
    for n in [500, 2000] {
        let m = matrix(n, 384);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let label = format!("{exec:?}").to_lowercase();
            group.bench_with_input(BenchmarkId::new(format!("build/{label}"), n), &m, |b, m| {
                b.iter(|| build_ssm_with(m, exec).unwrap())
            });
            let s = build_ssm_with(&m, exec).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("standardize/{label}"), n), &s, |b, s| {
                b.iter(|| standardize_with(s, Population::UpperTriangle, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ssm);
criterion_main!(benches);
