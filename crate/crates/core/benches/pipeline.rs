//! Run once with default features and once with `--no-default-features` to
//! compare the parallel and sequential builds; group names carry the mode.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dpmi::aggregate::accumulate;
use dpmi::eval::binary_baseline;
use dpmi::eval::synth::{synth_generate, SynthParams};
use dpmi::mi::MiParams;
use dpmi::model::PrivacyConfig;
use dpmi::pipeline::{rank_records, PipelineOptions};

fn mode() -> &'static str {
    if dpmi::exec::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("accumulate/{}", mode()));
    for rows in [100_000usize, 1_000_000] {
        let records = synth_generate(&SynthParams::new(rows, 2_000, 22, 0.5, 1)).unwrap();
        group.throughput(Throughput::Elements(rows as u64));
        group.bench_with_input(BenchmarkId::from_parameter(rows), &records, |b, r| {
            b.iter(|| accumulate(r, 16).into_sorted())
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let records = synth_generate(&SynthParams::new(200_000, 2_000, 22, 0.5, 2)).unwrap();
    let params = MiParams::default();
    let opts = PipelineOptions::default();
    let mut group = c.benchmark_group(format!("rank/{}", mode()));
    group.sample_size(10);
    group.bench_function("batched", |b| {
        b.iter(|| rank_records(records.clone(), &PrivacyConfig::disabled(), &params, &opts).unwrap())
    });
    group.bench_function("binary", |b| b.iter(|| binary_baseline(&records, &params, &opts).unwrap()));
    let private = PrivacyConfig::builder().epsilon(1.0).seed(3).build().unwrap();
    group.bench_function("batched_dp", |b| {
        b.iter(|| rank_records(records.clone(), &private, &params, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, aggregation, ranking);
criterion_main!(benches);
